#!/usr/bin/env python3
"""
Development tasks for the formflight toolkit: setup, checks, tests and a
quick smoke run of the command-line tool.
"""

import argparse
import os
import subprocess
import sys
from pathlib import Path

PACKAGE = "formflight"


def run_command(cmd: str, description: str, check: bool = True) -> bool:
    """Run a shell command, reporting success or failure."""
    print(f"[*] {description}...")
    try:
        subprocess.run(cmd, shell=True, check=check)
    except subprocess.CalledProcessError as e:
        print(f"[ERROR] {description} failed: {e}")
        return False
    print(f"[OK] {description}")
    return True


def setup_dev() -> bool:
    commands = [
        ("python -m pip install --upgrade pip", "Upgrading pip"),
        ("pip install -r requirements.txt", "Installing dependencies"),
        ("pip install -r requirements-dev.txt", "Installing dev dependencies"),
        ("pip install -e .", f"Installing {PACKAGE} in editable mode"),
    ]
    for cmd, desc in commands:
        if not run_command(cmd, desc, check=True):
            print("[ERROR] Development setup failed")
            return False
    print("[OK] Development environment ready")
    return True


def lint() -> bool:
    commands = [
        (f"ruff check {PACKAGE}/ tests/", "Running ruff linter"),
        (f"ruff format --check {PACKAGE}/ tests/", "Checking code formatting"),
        (f"mypy {PACKAGE}/", "Running type checker"),
        (f"bandit -q -r {PACKAGE}/", "Running security checks"),
    ]
    return all([run_command(cmd, desc) for cmd, desc in commands])


def format_code() -> None:
    run_command(f"ruff format {PACKAGE}/ tests/", "Formatting code with ruff", check=False)
    run_command(f"ruff check --fix {PACKAGE}/ tests/", "Fixing linting issues", check=False)


def test(coverage: bool = True, verbose: bool = False, fast: bool = False) -> bool:
    cmd = "pytest tests/"
    if verbose:
        cmd += " -v"
    if fast:
        cmd += ' -m "not slow"'
    if coverage:
        cmd += f" --cov={PACKAGE} --cov-report=term-missing --cov-report=html"
    return run_command(cmd, "Running tests")


def smoke(output: Path) -> bool:
    """Analyze every preset and run the smallest bundled scenario."""
    ok = True
    for controller in ("lqr", "lqr-int", "structured"):
        # lqr-int is expected to report string instability (exit code 2)
        cmd = f"{sys.executable} -m {PACKAGE} analyze --controller {controller} --output {output / controller}"
        result = subprocess.run(cmd, shell=True)
        expected = 2 if controller == "lqr-int" else 0
        if result.returncode != expected:
            print(f"[ERROR] analyze {controller} exited {result.returncode}, expected {expected}")
            ok = False
    ok &= run_command(
        f"{sys.executable} -m {PACKAGE} simulate empty --output {output / 'empty'}", "Simulating 'empty'"
    )
    return ok


def clean() -> None:
    commands = [
        ("find . -type d -name __pycache__ -exec rm -rf {} +", "Removing Python cache"),
        ("rm -rf .pytest_cache/ .mypy_cache/ .ruff_cache/", "Removing tool caches"),
        ("rm -rf htmlcov/ .coverage", "Removing coverage data"),
        ("rm -rf dist/ build/ *.egg-info/", "Removing build artifacts"),
        ("rm -rf runs/", "Removing run outputs"),
    ]
    for cmd, desc in commands:
        run_command(cmd, desc, check=False)


def main() -> None:
    parser = argparse.ArgumentParser(description="formflight development tool")
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    subparsers.add_parser("setup", help="Set up development environment")
    subparsers.add_parser("lint", help="Run linting and type checking")
    subparsers.add_parser("format", help="Format code")

    test_parser = subparsers.add_parser("test", help="Run tests")
    test_parser.add_argument("--no-coverage", action="store_true", help="Skip coverage report")
    test_parser.add_argument("--fast", action="store_true", help="Skip tests marked slow")
    test_parser.add_argument("-v", "--verbose", action="store_true", help="Verbose output")

    smoke_parser = subparsers.add_parser("smoke", help="Run the CLI on bundled presets")
    smoke_parser.add_argument("--output", type=Path, default=Path("runs/smoke"))

    subparsers.add_parser("clean", help="Clean up build artifacts")
    subparsers.add_parser("ci", help="Run all CI checks locally")

    args = parser.parse_args()
    if not args.command:
        parser.print_help()
        return

    os.chdir(Path(__file__).parent)

    success = True
    if args.command == "setup":
        success = setup_dev()
    elif args.command == "lint":
        success = lint()
    elif args.command == "format":
        format_code()
    elif args.command == "test":
        success = test(coverage=not args.no_coverage, verbose=args.verbose, fast=args.fast)
    elif args.command == "smoke":
        success = smoke(args.output)
    elif args.command == "clean":
        clean()
    elif args.command == "ci":
        print("[*] Running full CI pipeline locally...")
        steps = [
            (lint, "Code quality checks"),
            (lambda: test(coverage=True, fast=True), "Tests with coverage"),
            (lambda: smoke(Path("runs/smoke")), "CLI smoke run"),
        ]
        for step_func, step_name in steps:
            print(f"\n[*] {step_name}")
            if not step_func():
                success = False
                break
        print("\n[OK] All CI checks passed" if success else "\n[ERROR] CI pipeline failed")

    sys.exit(0 if success else 1)


if __name__ == "__main__":
    main()
