from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field

Verdict = Literal["stable", "marginal", "unstable"]


class StringStabilityReport(BaseModel):
    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "controller": "structured",
                "peak_sigma": 1.0000211,
                "peak_frequency_radps": 0.0247,
                "peak_growth": 0.9999968,
                "verdict": "stable",
                "closed_loop_stable": True,
                "spectral_abscissa": -0.081,
                "headway_s": 0.0,
            }
        }
    )

    controller: str = Field("custom", description="Controller reference that was analyzed")
    peak_sigma: float = Field(..., ge=0.0, description="Refined peak max singular value of T")
    peak_frequency_radps: float = Field(..., gt=0.0, description="Frequency of the peak")
    peak_growth: float | None = Field(
        None, ge=0.0, description="Refined peak spectral radius of T, the per-link growth rate"
    )
    growth_frequency_radps: float | None = Field(None, gt=0.0)
    channel_peaks: list[float] = Field(
        default_factory=list, description="Peak |T_kk| per output channel (x, y, z)"
    )
    verdict: Verdict
    closed_loop_stable: bool
    spectral_abscissa: float = Field(..., description="Largest real part of closed-loop poles")
    headway_s: float = Field(0.0, ge=0.0)
    omega_radps: list[float] = Field(default_factory=list, description="Sweep grid")
    sigma_max: list[float] = Field(default_factory=list, description="Max singular value per grid point")

    @property
    def is_string_stable(self) -> bool:
        return self.verdict != "unstable"


class AircraftEnergy(BaseModel):
    aircraft: int = Field(..., ge=0)
    mean_thrust_change_pct: float = Field(..., description="Mean of dT/T0 over the window, negative is a saving")
    std_thrust_change_pct: float = Field(..., ge=0.0)
    mean_upwash_mps: float = 0.0
    induced_drag_change_pct: float = Field(0.0, description="Lifting-line drag change from the mean upwash")


class EnergyReport(BaseModel):
    window_s: float = Field(..., gt=0.0)
    baseline_subtracted: bool = False
    aircraft: list[AircraftEnergy]

    @property
    def follower_mean_pct(self) -> float:
        followers = [a.mean_thrust_change_pct for a in self.aircraft if a.aircraft > 0]
        return sum(followers) / len(followers) if followers else 0.0


class SeedResult(BaseModel):
    seed: int
    energy: EnergyReport
    amplification_ratios: list[float | None] = Field(default_factory=list)
    final_error_norm_m: list[float] = Field(default_factory=list)


class SimulationSummary(BaseModel):
    scenario: str
    n_aircraft: int = Field(..., ge=1)
    duration_s: float
    dt_s: float
    controller: str
    seed: int
    steps: int = Field(..., ge=0)
    energy: EnergyReport | None = None
    amplification_ratios: list[float | None] = Field(
        default_factory=list, description="Per-follower peak error growth, None when not applicable"
    )
    final_error_norm_m: list[float] = Field(default_factory=list)
    diverged: bool = False
    ensemble: list[SeedResult] = Field(
        default_factory=list, description="One entry per seed when several seeds run, the first is the top level"
    )


class SynthesisReport(BaseModel):
    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "hinf_norm": 1.0,
                "decay_rate": 0.0812,
                "max_pole_frequency_radps": 12.4,
                "objective": 1.0,
                "evaluations": 412,
                "converged": True,
            }
        }
    )

    hinf_norm: float
    decay_rate: float
    max_pole_frequency_radps: float
    objective: float
    evaluations: int = Field(..., ge=0)
    converged: bool
    k_p_diag: list[float]
    k_d_diag: list[float]
    constraints: dict[str, float] = Field(default_factory=dict)


class RunManifest(BaseModel):
    command: str
    argv: list[str] = Field(default_factory=list, description="Arguments that reproduce the run")
    run_id: str
    version: str
    config: dict[str, Any] = Field(default_factory=dict, description="Fully resolved configuration")
    seeds: list[int] = Field(default_factory=list)
    started_at: str
    finished_at: str
    outputs: list[str] = Field(default_factory=list)
    host: dict[str, Any] = Field(default_factory=dict)
    exit_code: int = 0


class ErrorResponse(BaseModel):
    error: str = Field(..., description="Error message")
    error_type: str = Field(default="generic", description="Type of error")
    run_id: str | None = Field(None, description="Run identifier")
    diagnostics: list[str] | dict[str, Any] | None = None
