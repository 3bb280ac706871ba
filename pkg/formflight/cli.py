"""Command-line front end: analysis, simulation, synthesis and data emission."""

from __future__ import annotations

import argparse
import os
import sys
import time
from collections.abc import Callable, Sequence
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np
import orjson
import structlog
from pydantic import BaseModel, ValidationError

from formflight import __version__
from formflight.config import get_settings
from formflight.control import (
    LqrWeights,
    augment_integral,
    bryson_weights,
    lqr_synthesize,
    resolve_controller,
    save_controller,
)
from formflight.errors import (
    EXIT_ERROR,
    EXIT_NOT_CONVERGED,
    EXIT_OK,
    EXIT_STRING_UNSTABLE,
    ConfigurationError,
    ErrorHandler,
    SimulationDivergedError,
)
from formflight.formsim import amplification_ratios, energy_report, run_ensemble, solo_baseline
from formflight.freqana import (
    FrequencyGrid,
    channel_magnitudes,
    complementary_sensitivity,
    string_stable,
)
from formflight.hinfsynth import build_problem, tune
from formflight.linmodel import LtiModel, builtin_a320, eigenvalues, model_from_json
from formflight.logging_utils import configure_logging
from formflight.metrics import (
    COMMAND_COUNTER,
    COMMAND_DURATION,
    PEAK_SINGULAR_VALUE,
    host_info,
    write_metrics,
)
from formflight.models.report import RunManifest, SeedResult, SimulationSummary
from formflight.models.scenario import load_problem, load_scenario
from formflight.turb import DEFAULT_LENGTH_SCALE_M, generate
from formflight.wake import HorseshoeVortex, horseshoe_velocity

logger = structlog.get_logger()

JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY


class _Parser(argparse.ArgumentParser):
    """Usage errors become configuration errors so exit code 2 stays reserved."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise ConfigurationError(f"usage: {message}", diagnostics=[self.format_usage().strip()])


class RunContext:
    """Output directory, manifest bookkeeping and written files of one command."""

    def __init__(self, command: str, argv: list[str], output: Path | None):
        self.command = command
        self.argv = argv
        self.run_id = ErrorHandler.generate_run_id()
        self.started_at = datetime.now(timezone.utc).isoformat()
        self.directory = output or get_settings().output_dir / f"{command}-{self.run_id}"
        self.directory.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []
        self.config: dict[str, Any] = {}
        self.seeds: list[int] = []

    def path(self, name: str) -> Path:
        path = self.directory / name
        self.outputs.append(name)
        return path

    def write_json(self, name: str, payload: Any) -> Path:
        if isinstance(payload, BaseModel):
            payload = payload.model_dump(mode="json")
        path = self.path(name)
        path.write_bytes(orjson.dumps(payload, option=JSON_OPTIONS) + b"\n")
        return path

    def write_manifest(self, exit_code: int) -> Path:
        manifest = RunManifest(
            command=self.command,
            argv=self.argv,
            run_id=self.run_id,
            version=__version__,
            config=self.config,
            seeds=self.seeds,
            started_at=self.started_at,
            finished_at=datetime.now(timezone.utc).isoformat(),
            outputs=list(self.outputs),
            host=host_info(),
            exit_code=exit_code,
        )
        path = self.directory / "manifest.json"
        path.write_bytes(orjson.dumps(manifest.model_dump(mode="json"), option=JSON_OPTIONS) + b"\n")
        return path


def _load_model(path: str | None) -> tuple[LtiModel, Any]:
    if path is None:
        return builtin_a320()
    try:
        return model_from_json(Path(path).read_bytes())
    except OSError as e:
        raise ConfigurationError(f"cannot read model file {path}: {e}") from e


def _grid(args: argparse.Namespace) -> FrequencyGrid:
    return FrequencyGrid(args.grid_start, args.grid_stop, args.grid_points)


def _write_sweep_csv(ctx: RunContext, t: LtiModel, report: Any) -> None:
    omega = np.asarray(report.omega_radps)
    table = np.column_stack([omega, report.sigma_max, channel_magnitudes(t, omega)])
    np.savetxt(
        ctx.path("sweep.csv"),
        table,
        delimiter=",",
        header="omega,sigma_max,T11,T22,T33",
        comments="",
        fmt="%.10g",
    )


def cmd_analyze(args: argparse.Namespace, ctx: RunContext) -> int:
    model, _ = _load_model(args.model)
    controller = resolve_controller(args.controller)
    report = string_stable(model, controller, _grid(args), args.headway, label=args.controller)
    PEAK_SINGULAR_VALUE.labels(controller=args.controller).set(report.peak_sigma)
    ctx.config = {
        "controller": args.controller,
        "model": args.model or "builtin_a320",
        "headway_s": args.headway,
        "grid": [args.grid_start, args.grid_stop, args.grid_points],
    }
    ctx.write_json("report.json", report)
    _write_sweep_csv(ctx, complementary_sensitivity(model, controller, args.headway), report)
    print(
        orjson.dumps(
            {
                "verdict": report.verdict,
                "peak_sigma": report.peak_sigma,
                "peak_growth": report.peak_growth,
                "output": str(ctx.directory),
            }
        ).decode()
    )
    return EXIT_OK if report.is_string_stable else EXIT_STRING_UNSTABLE


def _seed_result(trace: Any, scenario: Any, params: Any, baseline: Any) -> SeedResult:
    window = min(scenario.energy_window_s, scenario.duration_s)
    return SeedResult(
        seed=scenario.seed,
        energy=energy_report(trace, params, window, baseline),
        amplification_ratios=amplification_ratios(trace) if trace.n_aircraft >= 3 else [],
        final_error_norm_m=np.linalg.norm(trace.errors[-1], axis=1).tolist(),
    )


def cmd_simulate(args: argparse.Namespace, ctx: RunContext) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = scenario.model_copy(update={"seed": args.seed})
    if args.duration is not None:
        scenario = type(scenario).model_validate({**scenario.model_dump(), "duration_s": args.duration})
    if args.seeds < 1:
        raise ConfigurationError(f"--seeds must be at least 1, got {args.seeds}")
    model, params = _load_model(args.model)
    scenarios = [scenario.model_copy(update={"seed": scenario.seed + k}) for k in range(args.seeds)]
    ctx.config = scenario.model_dump(mode="json")
    ctx.seeds = [sc.seed for sc in scenarios]

    summary = SimulationSummary(
        scenario=scenario.name,
        n_aircraft=scenario.n_aircraft,
        duration_s=scenario.duration_s,
        dt_s=scenario.dt_s,
        controller=scenario.controller,
        seed=scenario.seed,
        steps=scenario.n_steps,
    )
    try:
        traces = run_ensemble(scenarios, args.jobs, model, params)
        baselines = [solo_baseline(sc, model, params) if args.baseline else None for sc in scenarios]
    except SimulationDivergedError as e:
        summary.diverged = True
        ctx.write_json(
            "summary.json",
            {**summary.model_dump(mode="json"), "divergence": {"aircraft": e.aircraft, "time_s": e.time_s}},
        )
        raise

    results = [_seed_result(t, sc, params, b) for t, sc, b in zip(traces, scenarios, baselines)]
    first = results[0]
    summary.energy = first.energy
    summary.amplification_ratios = first.amplification_ratios
    summary.final_error_norm_m = first.final_error_norm_m
    if len(results) > 1:
        summary.ensemble = results
        for sc, trace in zip(scenarios, traces):
            trace.to_csv(ctx.path(f"trace_seed{sc.seed}.csv"))
    else:
        traces[0].to_csv(ctx.path("trace.csv"))
    ctx.write_json("summary.json", summary)
    print(
        orjson.dumps(
            {
                "scenario": scenario.name,
                "seeds": ctx.seeds,
                "follower_mean_thrust_change_pct": float(
                    np.mean([r.energy.follower_mean_pct for r in results])
                ),
                "amplification_ratios": summary.amplification_ratios,
                "output": str(ctx.directory),
            }
        ).decode()
    )
    return EXIT_OK


def cmd_synthesize(args: argparse.Namespace, ctx: RunContext) -> int:
    config = load_problem(args.problem)
    if args.max_evaluations is not None:
        config = config.model_copy(update={"max_evaluations": args.max_evaluations})
    model, _ = _load_model(args.model)
    problem = build_problem(config, model)
    ctx.config = config.model_dump(mode="json")
    ctx.seeds = [config.seed]

    result = tune(problem)
    save_controller(result.gains, ctx.path("gains.json"))
    report = result.to_report(problem.constraints)
    ctx.write_json("report.json", report)
    print(
        orjson.dumps(
            {
                "converged": report.converged,
                "hinf_norm": report.hinf_norm,
                "evaluations": report.evaluations,
                "output": str(ctx.directory),
            }
        ).decode()
    )
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_lqr(args: argparse.Namespace, ctx: RunContext) -> int:
    model, _ = _load_model(args.model)
    design = augment_integral(model) if args.integral else model
    if args.weights:
        try:
            doc = orjson.loads(Path(args.weights).read_bytes())
            weights = LqrWeights(q=np.array(doc["Q"]), r=np.array(doc["R"]))
        except (OSError, orjson.JSONDecodeError, KeyError) as e:
            raise ConfigurationError(f"cannot read weights {args.weights}: {e}") from e
    else:
        weights = bryson_weights(design)
    gain = lqr_synthesize(design, weights)
    save_controller(gain, ctx.path("gains.json"))
    report = string_stable(model, gain, _grid(args), label="lqr-design")
    poles = eigenvalues(LtiModel(a=design.a - design.b @ gain.k, b=design.b))
    ctx.config = {"integral": args.integral, "weights": args.weights or "bryson"}
    ctx.write_json(
        "report.json",
        {
            "residual_norm": gain.metadata["residual_norm"],
            "spectral_abscissa": gain.metadata["spectral_abscissa"],
            "closed_loop_poles": [[float(p.real), float(p.imag)] for p in poles],
            "string_stability": report.model_dump(mode="json", exclude={"omega_radps", "sigma_max"}),
        },
    )
    print(orjson.dumps({"verdict": report.verdict, "output": str(ctx.directory)}).decode())
    return EXIT_OK


def cmd_wakefield(args: argparse.Namespace, ctx: RunContext) -> int:
    _, params = _load_model(args.model)
    vortex = HorseshoeVortex.for_aircraft(params, (args.x_m, 0.0, 0.0))
    ys = np.linspace(args.y_min, args.y_max, args.n_y)
    zs = np.linspace(args.z_min, args.z_max, args.n_z)
    yy, zz = np.meshgrid(ys, zs, indexing="ij")
    points = np.stack([np.zeros_like(yy), yy, zz], axis=-1).reshape(-1, 3)
    velocity = horseshoe_velocity(vortex, points)
    ctx.config = {k: v for k, v in vars(args).items() if k != "output"}
    np.savetxt(
        ctx.path("wakefield.csv"),
        np.column_stack([points[:, 1], points[:, 2], velocity]),
        delimiter=",",
        header="y,z,vx,vy,vz",
        comments="",
        fmt="%.10g",
    )
    print(orjson.dumps({"points": int(points.shape[0]), "output": str(ctx.directory)}).decode())
    return EXIT_OK


def cmd_turbfield(args: argparse.Namespace, ctx: RunContext) -> int:
    field = generate(
        args.extent_m,
        length_scale=args.length_scale_m,
        intensity=args.intensity_frac,
        reference_speed=args.speed_mps,
        dx=args.dx_m,
        seed=args.seed,
    )
    ctx.config = field.describe()
    ctx.seeds = [args.seed]
    field.to_csv(ctx.path("turbulence.csv"))
    ctx.write_json("field.json", field.describe())
    print(orjson.dumps({"samples": field.n_samples, "output": str(ctx.directory)}).decode())
    return EXIT_OK


def _add_output(p: argparse.ArgumentParser) -> None:
    p.add_argument("--output", type=Path, default=None, help="Output directory (default: per-run folder)")
    p.add_argument("--model", default=None, help="Aircraft model JSON (default: built-in A320)")


def _add_grid(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid-start", type=float, default=1e-3, help="Lowest frequency, rad/s")
    p.add_argument("--grid-stop", type=float, default=1e3, help="Highest frequency, rad/s")
    p.add_argument("--grid-points", type=int, default=400)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="formflight", description="Formation-flight string-stability toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Override FORMFLIGHT_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="String-stability verdict and singular-value sweep")
    p.add_argument("--controller", default="structured", help="lqr, lqr-int, structured or file:<path>")
    p.add_argument("--headway", type=float, default=0.0, help="Time headway, s")
    _add_grid(p)
    _add_output(p)

    p = sub.add_parser("simulate", help="Run a formation scenario")
    p.add_argument("scenario", help="Scenario file or bundled name")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--duration", type=float, default=None, help="Override duration, s")
    p.add_argument("--baseline", action="store_true", help="Subtract a solo-flight baseline")
    p.add_argument("--seeds", type=int, default=1, help="Run this many consecutive seeds from --seed")
    p.add_argument(
        "--jobs", type=int, default=None, help="Worker processes for multi-seed runs (default: settings)"
    )
    _add_output(p)

    p = sub.add_parser("synthesize", help="Tune the structured controller")
    p.add_argument("problem", help="Synthesis problem file or bundled name")
    p.add_argument("--max-evaluations", type=int, default=None)
    _add_output(p)

    p = sub.add_parser("lqr", help="Design an LQR gain from Q and R")
    p.add_argument("--weights", default=None, help='JSON file {"Q": [[...]], "R": [[...]]}')
    p.add_argument("--integral", action="store_true", help="Design on the integral-augmented model")
    _add_grid(p)
    _add_output(p)

    p = sub.add_parser("wakefield", help="Induced velocity of a wake on a cross-stream plane")
    p.add_argument("--x-m", type=float, default=0.0, help="Leader position ahead of the plane, m")
    p.add_argument("--y-min", type=float, default=-60.0)
    p.add_argument("--y-max", type=float, default=60.0)
    p.add_argument("--z-min", type=float, default=-20.0)
    p.add_argument("--z-max", type=float, default=20.0)
    p.add_argument("--n-y", type=int, default=121)
    p.add_argument("--n-z", type=int, default=41)
    _add_output(p)

    p = sub.add_parser("turbfield", help="Generate a frozen turbulence record")
    p.add_argument("--extent-m", type=float, default=70_000.0)
    p.add_argument("--intensity-frac", type=float, default=0.02)
    p.add_argument("--length-scale-m", type=float, default=DEFAULT_LENGTH_SCALE_M)
    p.add_argument("--speed-mps", type=float, default=230.0)
    p.add_argument("--dx-m", type=float, default=2.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", type=Path, default=None)

    p = sub.add_parser("replay", help="Re-run a command from its manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--output", type=Path, default=None)
    return parser


COMMANDS: dict[str, Callable[[argparse.Namespace, RunContext], int]] = {
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "synthesize": cmd_synthesize,
    "lqr": cmd_lqr,
    "wakefield": cmd_wakefield,
    "turbfield": cmd_turbfield,
}


def _strip_output(argv: Sequence[str]) -> list[str]:
    kept: list[str] = []
    skip = False
    for token in argv:
        if skip:
            skip = False
            continue
        if token == "--output":
            skip = True
            continue
        if token.startswith("--output="):
            continue
        kept.append(token)
    return kept


def _replay(args: argparse.Namespace) -> int:
    try:
        manifest = RunManifest.model_validate(orjson.loads(args.manifest.read_bytes()))
    except (OSError, orjson.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read manifest {args.manifest}: {e}") from e
    if manifest.command == "replay":
        raise ConfigurationError("a replay manifest cannot be replayed")
    argv = list(manifest.argv)
    if args.output is not None:
        argv += ["--output", str(args.output)]
    logger.info("replaying", run_id=manifest.run_id, command=manifest.command)
    return main(argv)


def _error_exit(error: Exception, run_id: str | None = None, debug: bool | None = None) -> int:
    if debug is None:
        debug = get_settings().debug
    document, exit_code = ErrorHandler.create_error_response(error, run_id, include_traceback=debug)
    print(orjson.dumps(document).decode())
    return exit_code


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # stderr logging before the first event: stdout carries only JSON documents
    configure_logging(os.getenv("FORMFLIGHT_LOG_LEVEL", "INFO"))
    try:
        settings = get_settings()
    except ValidationError as e:
        return _error_exit(ConfigurationError(f"invalid environment settings: {e}"), debug=False)
    try:
        args = build_parser().parse_args(argv)
    except ConfigurationError as e:
        return _error_exit(e)
    configure_logging(args.log_level or settings.log_level)

    if args.command == "replay":
        try:
            return _replay(args)
        except Exception as e:
            return _error_exit(e)

    start = time.perf_counter()
    ctx: RunContext | None = None
    exit_code = EXIT_ERROR
    try:
        ctx = RunContext(args.command, _strip_output(argv), args.output)
        exit_code = COMMANDS[args.command](args, ctx)
        return exit_code
    except Exception as e:
        logger.error("command_failed", command=args.command, error=str(e))
        exit_code = _error_exit(e, ctx.run_id if ctx else None)
        return exit_code
    finally:
        status = {EXIT_OK: "ok", EXIT_STRING_UNSTABLE: "string_unstable", EXIT_NOT_CONVERGED: "not_converged"}
        COMMAND_COUNTER.labels(command=args.command, status=status.get(exit_code, "error")).inc()
        COMMAND_DURATION.labels(command=args.command).observe(time.perf_counter() - start)
        if ctx is not None:
            ctx.write_manifest(exit_code)
            if settings.metrics_enabled:
                write_metrics(ctx.directory / "metrics.prom")
