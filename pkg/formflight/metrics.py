from __future__ import annotations

import platform
from pathlib import Path

import psutil
from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, Info, write_to_textfile

from formflight import __version__

REGISTRY = CollectorRegistry(auto_describe=True)

COMMAND_COUNTER = Counter(
    "formflight_commands_total",
    "Total number of CLI commands executed",
    labelnames=("command", "status"),
    registry=REGISTRY,
)

COMMAND_DURATION = Histogram(
    "formflight_command_duration_seconds",
    "Wall time of CLI commands (seconds)",
    labelnames=("command",),
    buckets=(0.1, 0.5, 1.0, 2.5, 5.0, 10.0, 30.0, 60.0, 120.0, 300.0, 600.0),
    registry=REGISTRY,
)

INTEGRATION_STEPS = Counter(
    "formflight_integration_steps_total",
    "Fixed-step integrator steps taken across all scenarios",
    registry=REGISTRY,
)

OBJECTIVE_EVALUATIONS = Counter(
    "formflight_objective_evaluations_total",
    "Synthesis objective evaluations",
    registry=REGISTRY,
)

PEAK_SINGULAR_VALUE = Gauge(
    "formflight_peak_singular_value",
    "Most recent peak max singular value of the complementary sensitivity",
    labelnames=("controller",),
    registry=REGISTRY,
)

TOOLKIT_INFO = Info(
    "formflight",
    "Information about the toolkit build",
    registry=REGISTRY,
)


def host_info() -> dict[str, object]:
    """Host facts recorded in run manifests."""
    memory = psutil.virtual_memory()
    return {
        "python": platform.python_version(),
        "platform": platform.platform(),
        "cpu_count": psutil.cpu_count(logical=True),
        "memory_total_bytes": memory.total,
    }


def update_toolkit_info() -> None:
    TOOLKIT_INFO.info({"version": __version__, "python": platform.python_version()})


def write_metrics(path: Path) -> Path:
    """Write the registry in textfile-collector format."""
    update_toolkit_info()
    write_to_textfile(str(path), REGISTRY)
    return path
