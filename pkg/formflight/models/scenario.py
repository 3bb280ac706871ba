from __future__ import annotations

import configparser
from importlib import resources
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from formflight.errors import ConfigurationError

Perturbation = Literal["none", "leader_lateral", "all_offset"]

_PRESETS = ("lqr", "lqr-int", "lqr_int", "lqr_integral", "structured")
_MASK_ENTRIES = ("kp_x", "kp_y", "kp_z", "kd_x", "kd_y", "kd_z")
_MASK_GROUPS = {"kp_diag": _MASK_ENTRIES[:3], "kd_diag": _MASK_ENTRIES[3:]}


def _check_controller(v: str) -> str:
    v = v.strip()
    if v.startswith("file:"):
        if len(v) == len("file:"):
            raise ValueError("file: reference needs a path")
        return v
    if v not in _PRESETS:
        raise ValueError(f"controller must be one of {_PRESETS[:2] + _PRESETS[-1:]} or file:<path>")
    return v


class FormationScenario(BaseModel):
    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "example": {
                "name": "fig_pdlqrsim",
                "n_aircraft": 10,
                "controller": "structured",
                "perturbation": "leader_lateral",
                "wake_enabled": False,
                "duration_s": 200.0,
                "dt_s": 0.01,
            }
        },
    )

    name: str = Field("custom", min_length=1, max_length=100)
    n_aircraft: int = Field(5, ge=1, le=100, description="Aircraft in the cascade, leader included")
    controller: str = Field("structured", description="Preset name or file:<path>")
    headway_s: float = Field(0.0, ge=0.0, le=60.0, description="Time headway")
    offset_x_m: float | None = Field(None, gt=0.0, description="Streamwise reference separation")
    offset_y_m: float | None = None
    offset_z_m: float | None = None
    perturbation: Perturbation = "none"
    perturbation_m: float | None = Field(
        None, description="Lateral perturbation magnitude, default 0.2 wingspans"
    )
    initial_states: list[list[float]] | None = Field(
        None, description="Explicit per-aircraft 12-state deviations, overrides perturbation"
    )
    wake_enabled: bool = True
    turbulence_intensity_frac: float = Field(0.0, ge=0.0, le=0.5)
    length_scale_m: float = Field(762.0, gt=0.0)
    turbulence_dx_m: float = Field(2.3, gt=0.0)
    seed: int = Field(0, ge=0)
    duration_s: float = Field(200.0, gt=0.0)
    dt_s: float = Field(0.01, gt=0.0, le=1.0)
    transient_s: float = Field(10.0, ge=0.0, description="Initial span excluded from amplification ratios")
    energy_window_s: float = Field(30.0, gt=0.0)
    n_wing_stations: int = Field(65, ge=3, le=401, description="Spanwise wake sampling points")
    tail_arm_m: float = Field(18.0, gt=0.0)

    @field_validator("controller")
    @classmethod
    def validate_controller(cls, v: str) -> str:
        return _check_controller(v)

    @field_validator("n_wing_stations")
    @classmethod
    def validate_odd(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError("n_wing_stations must be odd")
        return v

    @model_validator(mode="after")
    def validate_consistency(self) -> FormationScenario:
        if self.duration_s < self.dt_s:
            raise ValueError("duration_s must be at least dt_s")
        offsets = (self.offset_x_m, self.offset_y_m, self.offset_z_m)
        if any(v is not None for v in offsets) and any(v is None for v in offsets):
            raise ValueError("offset_x_m, offset_y_m and offset_z_m must be given together")
        if self.initial_states is not None:
            if len(self.initial_states) != self.n_aircraft:
                raise ValueError(
                    f"initial_states has {len(self.initial_states)} rows, expected {self.n_aircraft}"
                )
            if any(len(row) != 12 for row in self.initial_states):
                raise ValueError("each initial state must have 12 entries")
        return self

    @property
    def offset(self) -> tuple[float, float, float] | None:
        if self.offset_x_m is None:
            return None
        return (self.offset_x_m, self.offset_y_m, self.offset_z_m)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration_s / self.dt_s))


class SynthesisProblemConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = Field("custom", min_length=1, max_length=100)
    controller: str = Field("structured", description="Initial gains: structured or file:<path>")
    scale_kp: float = Field(1.0, gt=0.0, description="Factor on the initial K_p diagonal")
    scale_kd: float = Field(1.0, gt=0.0, description="Factor on the initial K_d diagonal")
    mask: tuple[str, ...] = Field(_MASK_ENTRIES, description="Tunable diagonal entries")
    hinf_bound: float = Field(1.0, gt=0.0)
    min_decay_per_s: float = Field(0.08, ge=0.0)
    max_frequency_radps: float = Field(50.0, gt=0.0)
    max_evaluations: int = Field(2000, ge=0, le=1_000_000)
    n_starts: int = Field(8, ge=1, le=64)
    seed: int = Field(0, ge=0)
    grid_start_radps: float = Field(1e-3, gt=0.0)
    grid_stop_radps: float = Field(1e3, gt=0.0)
    grid_points: int = Field(400, ge=2, le=100_000)

    @field_validator("controller")
    @classmethod
    def validate_controller(cls, v: str) -> str:
        v = _check_controller(v)
        if not (v == "structured" or v.startswith("file:")):
            raise ValueError("synthesis starts from structured gains")
        return v

    @field_validator("mask", mode="before")
    @classmethod
    def validate_mask(cls, v: Any) -> tuple[str, ...]:
        tokens = [t.strip() for t in v.split(",")] if isinstance(v, str) else list(v)
        entries: list[str] = []
        for token in tokens:
            if not token:
                continue
            group = _MASK_GROUPS.get(token, (token,))
            for entry in group:
                if entry not in _MASK_ENTRIES:
                    raise ValueError(
                        f"unknown mask entry {entry!r}; use {', '.join(_MASK_ENTRIES)}, kp_diag or kd_diag"
                    )
                if entry not in entries:
                    entries.append(entry)
        return tuple(e for e in _MASK_ENTRIES if e in entries)

    @model_validator(mode="after")
    def validate_grid(self) -> SynthesisProblemConfig:
        if self.grid_start_radps >= self.grid_stop_radps:
            raise ValueError("grid_start_radps must be below grid_stop_radps")
        return self


# INI section -> key -> model field
SCENARIO_SCHEMA: dict[str, tuple[str, ...]] = {
    "formation": (
        "name",
        "n_aircraft",
        "offset_x_m",
        "offset_y_m",
        "offset_z_m",
        "perturbation",
        "perturbation_m",
        "wake_enabled",
        "n_wing_stations",
        "tail_arm_m",
    ),
    "controller": ("controller", "headway_s"),
    "turbulence": ("intensity_frac", "length_scale_m", "dx_m", "seed"),
    "integration": ("duration_s", "dt_s", "transient_s", "energy_window_s"),
}
_SCENARIO_RENAMES = {
    ("turbulence", "intensity_frac"): "turbulence_intensity_frac",
    ("turbulence", "dx_m"): "turbulence_dx_m",
}

PROBLEM_SCHEMA: dict[str, tuple[str, ...]] = {
    "problem": ("name", "controller", "scale_kp", "scale_kd", "mask", "max_evaluations", "n_starts", "seed"),
    "constraints": ("hinf_bound", "min_decay_per_s", "max_frequency_radps"),
    "grid": ("start_radps", "stop_radps", "points"),
}
_PROBLEM_RENAMES = {
    ("grid", "start_radps"): "grid_start_radps",
    ("grid", "stop_radps"): "grid_stop_radps",
    ("grid", "points"): "grid_points",
}


def bundled_names() -> list[str]:
    root = resources.files("formflight.scenarios")
    return sorted(p.name[: -len(".ini")] for p in root.iterdir() if p.name.endswith(".ini"))


def resolve_config_path(source: str | Path) -> tuple[str, str]:
    """Return (name, text) for a file path or a bundled config name."""
    path = Path(source)
    if path.suffix == ".ini" or path.exists():
        try:
            return path.stem, path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigurationError(f"cannot read {path}: {e}") from e
    bundled = resources.files("formflight.scenarios") / f"{source}.ini"
    if not bundled.is_file():
        raise ConfigurationError(
            f"no config file {source!r} and no bundled config of that name",
            diagnostics=[f"bundled: {', '.join(bundled_names())}"],
        )
    return str(source), bundled.read_text(encoding="utf-8")


def _parse(text: str, source: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as e:
        raise ConfigurationError(
            f"{source}: line {e.lineno}: key outside any section",
            diagnostics=[f"line {e.lineno}: {e.line.strip()}"],
        ) from e
    except configparser.ParsingError as e:
        lines = [f"line {lineno}: {line.strip()}" for lineno, line in e.errors]
        raise ConfigurationError(f"{source}: unparseable lines", diagnostics=lines) from e
    except configparser.Error as e:
        raise ConfigurationError(f"{source}: {e.message}") from e
    return parser


def _collect(
    parser: configparser.ConfigParser,
    schema: dict[str, tuple[str, ...]],
    renames: dict[tuple[str, str], str],
    source: str,
) -> tuple[dict[str, str], dict[str, str]]:
    values: dict[str, str] = {}
    origin: dict[str, str] = {}
    problems: list[str] = []
    for section in parser.sections():
        if section not in schema:
            problems.append(f"[{section}]: unknown section")
            continue
        for key, raw in parser.items(section):
            if key not in schema[section]:
                problems.append(f"{section}.{key}: unknown key")
                continue
            field = renames.get((section, key), key)
            values[field] = raw.strip()
            origin[field] = f"{section}.{key}"
    if problems:
        raise ConfigurationError(f"{source}: invalid keys", diagnostics=problems)
    return values, origin


def _validate(model: type[BaseModel], values: dict[str, Any], origin: dict[str, str], source: str) -> Any:
    try:
        return model.model_validate(values)
    except ValidationError as e:
        diagnostics = []
        for error in e.errors():
            field = str(error["loc"][0]) if error["loc"] else "root"
            diagnostics.append(f"{origin.get(field, field)}: {error['msg']}")
        raise ConfigurationError(
            f"{source}: validation failed: " + "; ".join(diagnostics), diagnostics=diagnostics
        ) from e


def load_scenario(source: str | Path) -> FormationScenario:
    name, text = resolve_config_path(source)
    parser = _parse(text, str(source))
    values, origin = _collect(parser, SCENARIO_SCHEMA, _SCENARIO_RENAMES, str(source))
    values.setdefault("name", name)
    return _validate(FormationScenario, values, origin, str(source))


def load_problem(source: str | Path) -> SynthesisProblemConfig:
    name, text = resolve_config_path(source)
    parser = _parse(text, str(source))
    values, origin = _collect(parser, PROBLEM_SCHEMA, _PROBLEM_RENAMES, str(source))
    values.setdefault("name", name)
    return _validate(SynthesisProblemConfig, values, origin, str(source))
