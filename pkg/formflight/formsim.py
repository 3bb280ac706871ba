"""Time-domain simulation of an aircraft cascade with delayed wake coupling and
frozen turbulence."""

from __future__ import annotations

import math
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Any

import numpy as np
import structlog

from formflight.config import get_settings
from formflight.control import Controller, ControllerRealization, realize, resolve_controller
from formflight.errors import ConfigurationError, DomainError, ErrorContext, SimulationDivergedError
from formflight.linmodel import (
    CONTROL_NAMES,
    STATE_NAMES,
    THRUST,
    AircraftParams,
    LtiModel,
    builtin_a320,
)
from formflight.metrics import INTEGRATION_STEPS
from formflight.models.report import AircraftEnergy, EnergyReport
from formflight.models.scenario import FormationScenario
from formflight.turb import TurbulenceField, generate
from formflight.wake import (
    CORE_RADIUS_FACTOR,
    LEG_SPACING_FACTOR,
    DisturbanceMap,
    SurfaceStations,
    induced_drag_change,
    induced_velocity,
    optimal_offset,
    wake_delay,
)

logger = structlog.get_logger()

DEFAULT_PERTURBATION_SPANS = 0.2
AMPLIFICATION_FLOOR_M = 1e-9


class DelayLine:
    """Ring buffer of timestamped samples read back a fixed delay later."""

    def __init__(self, delay: float, capacity: int, initial: Any, t0: float = 0.0):
        if delay < 0:
            raise DomainError(f"delay must be non-negative, got {delay}")
        if capacity < 2:
            raise DomainError(f"capacity must be at least 2, got {capacity}")
        initial = np.asarray(initial, dtype=float)
        self.delay = delay
        self._times = np.full(capacity, -np.inf)
        self._values = np.zeros((capacity, *initial.shape))
        self._head = 0
        self._count = 0
        self.push(t0, initial)

    @classmethod
    def for_step(cls, delay: float, dt: float, initial: Any, t0: float = 0.0) -> DelayLine:
        return cls(delay, math.ceil(delay / dt) + 4, initial, t0)

    def push(self, t: float, value: Any) -> None:
        capacity = self._times.size
        if self._count and t <= self._times[(self._head - 1) % capacity]:
            raise DomainError("delay line timestamps must increase")
        self._times[self._head] = t
        self._values[self._head] = value
        self._head = (self._head + 1) % capacity
        self._count = min(self._count + 1, capacity)

    def read(self, t: float) -> np.ndarray:
        """Value at t - delay; held at the oldest or newest sample outside the stored span."""
        capacity = self._times.size
        order = (self._head - self._count + np.arange(self._count)) % capacity
        times = self._times[order]
        query = t - self.delay
        if query <= times[0]:
            return self._values[order[0]].copy()
        if query >= times[-1]:
            return self._values[order[-1]].copy()
        k = int(np.searchsorted(times, query, side="right")) - 1
        frac = (query - times[k]) / (times[k + 1] - times[k])
        lower, upper = self._values[order[k]], self._values[order[k + 1]]
        return lower + frac * (upper - lower)


@dataclass(frozen=True, eq=False)
class SimTrace:
    """Per-aircraft time series on a uniform time base (axis 0 time, axis 1 aircraft)."""

    t: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    errors: np.ndarray
    upwash: np.ndarray
    wake_head: np.ndarray
    trim_thrust_n: float
    scenario: FormationScenario

    @property
    def n_aircraft(self) -> int:
        return self.states.shape[1]

    @property
    def thrust_change_n(self) -> np.ndarray:
        return self.controls[:, :, THRUST]

    @property
    def thrust_change_pct(self) -> np.ndarray:
        return 100.0 * self.thrust_change_n / self.trim_thrust_n

    def to_csv(self, path: Path) -> Path:
        n_t, n_a = self.t.size, self.n_aircraft
        table = np.column_stack(
            [
                np.repeat(self.t, n_a),
                np.tile(np.arange(n_a), n_t),
                self.states.reshape(-1, len(STATE_NAMES)),
                self.controls.reshape(-1, len(CONTROL_NAMES)),
                self.errors[:, :, 1].ravel(),
                self.errors[:, :, 2].ravel(),
                self.errors[:, :, 0].ravel(),
                self.thrust_change_pct.ravel(),
            ]
        )
        header = ",".join(
            ["t", "aircraft_id", *STATE_NAMES, *CONTROL_NAMES, "e_y", "e_z", "e_x", "dT_pct"]
        )
        fmt = ["%.6f", "%d"] + ["%.10g"] * (table.shape[1] - 2)
        np.savetxt(path, table, delimiter=",", header=header, comments="", fmt=fmt)
        return path


@dataclass(frozen=True, eq=False)
class _Setup:
    model: LtiModel
    params: AircraftParams
    ctrl: ControllerRealization
    dmap: DisturbanceMap
    station_offsets: np.ndarray
    offset: np.ndarray
    delay: float
    field: TurbulenceField | None
    initial: np.ndarray


def _initial_states(sc: FormationScenario, params: AircraftParams) -> np.ndarray:
    x0 = np.zeros((sc.n_aircraft, len(STATE_NAMES)))
    if sc.initial_states is not None:
        return np.array(sc.initial_states, dtype=float)
    magnitude = sc.perturbation_m
    if magnitude is None:
        magnitude = DEFAULT_PERTURBATION_SPANS * params.wingspan_m
    if sc.perturbation == "leader_lateral":
        x0[0, 1] = magnitude
    elif sc.perturbation == "all_offset":
        # every follower starts off its reference by the same lateral amount
        x0[:, 1] = -magnitude * np.arange(sc.n_aircraft)
    return x0


def _prepare(
    sc: FormationScenario,
    model: LtiModel | None,
    params: AircraftParams | None,
    controller: Controller | None,
) -> _Setup:
    if model is None or params is None:
        model, params = builtin_a320()
    if controller is None:
        controller = resolve_controller(sc.controller)
    if model.n_states != len(STATE_NAMES):
        raise ConfigurationError(f"simulation needs the 12-state aircraft, got {model.n_states}")

    offset = np.array(sc.offset) if sc.offset is not None else optimal_offset(params)
    stations = SurfaceStations(
        wingspan_m=params.wingspan_m,
        tail_arm_m=sc.tail_arm_m,
        n_wing_stations=sc.n_wing_stations,
    )
    core = CORE_RADIUS_FACTOR * params.wingspan_m
    if sc.wake_enabled and sc.n_aircraft > 1 and stations.spacing_m > core:
        logger.warning(
            "wing stations coarser than the vortex core, wake forcing will alias",
            scenario=sc.name,
            spacing_m=stations.spacing_m,
            core_radius_m=core,
        )
    field = None
    if sc.turbulence_intensity_frac > 0:
        margin = stations.tail_arm_m + 10.0 * params.wingspan_m
        x_start = -(sc.n_aircraft - 1) * offset[0] - margin
        extent = params.cruise_speed_mps * sc.duration_s - x_start + margin
        field = generate(
            extent,
            length_scale=sc.length_scale_m,
            intensity=sc.turbulence_intensity_frac,
            reference_speed=params.cruise_speed_mps,
            dx=sc.turbulence_dx_m,
            seed=sc.seed,
            x_start=x_start,
        )
    return _Setup(
        model=model,
        params=params,
        ctrl=realize(model, controller, sc.headway_s),
        dmap=DisturbanceMap.build(model, stations),
        station_offsets=stations.offsets(),
        offset=offset,
        delay=wake_delay(offset[0], params.cruise_speed_mps),
        field=field,
        initial=_initial_states(sc, params),
    )


def _simulate(sc: FormationScenario, setup: _Setup, coupled: bool, wake: bool) -> SimTrace:
    model, ctrl, params = setup.model, setup.ctrl, setup.params
    n, dt, n_steps = sc.n_aircraft, sc.dt_s, sc.n_steps
    a_t, b_t = model.a.T, model.b.T
    offsets = setup.station_offsets
    n_wing = offsets.shape[0] - 1
    span = params.wingspan_m
    leg = span * LEG_SPACING_FACTOR
    core = CORE_RADIUS_FACTOR * span
    threshold = get_settings().divergence_threshold
    along_track = -setup.offset[0] * np.arange(n)

    x = setup.initial.copy()
    xi = np.zeros((n, ctrl.n_states))
    delay_line = DelayLine.for_step(setup.delay, dt, x[:, 1:3])

    def position_error(x: np.ndarray) -> np.ndarray:
        eps = -x[:, :3].copy()
        if coupled:
            eps[1:] += x[:-1, :3]
        return eps

    def flow(t: float, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        velocities = np.zeros((n, offsets.shape[0], 3))
        heads = np.full((n, 3), np.nan)
        if wake and n > 1:
            delayed = delay_line.read(t)
            heads[1:, 0] = setup.offset[0]
            heads[1:, 1:] = delayed[:-1] + setup.offset[1:]
            points = offsets[None, :, :] + np.concatenate(
                [np.zeros((n - 1, 1)), x[1:, 1:3]], axis=1
            )[:, None, :]
            velocities[1:] += induced_velocity(
                heads[1:, None, :], leg, params.wake_circulation_m2ps, core, points
            )
        if setup.field is not None:
            track = params.cruise_speed_mps * t + along_track + x[:, 0]
            velocities += setup.field.sample(track[:, None] + offsets[None, :, 0])
        return velocities, heads

    def derivative(t: float, x: np.ndarray, xi: np.ndarray) -> tuple:
        eps = position_error(x)
        u = xi @ ctrl.h.T + x @ ctrl.k_x.T + eps @ ctrl.k_e.T
        velocities, heads = flow(t, x)
        dx = x @ a_t + u @ b_t + setup.dmap.apply(velocities)
        dxi = xi @ ctrl.a.T + x @ ctrl.f.T + eps @ ctrl.g.T
        return dx, dxi, u, velocities, heads

    times = dt * np.arange(n_steps + 1)
    states = np.empty((n_steps + 1, n, len(STATE_NAMES)))
    controls = np.empty((n_steps + 1, n, len(CONTROL_NAMES)))
    errors = np.empty((n_steps + 1, n, 3))
    upwash = np.empty((n_steps + 1, n))
    wake_head = np.empty((n_steps + 1, n, 3))

    for k in range(n_steps + 1):
        t = times[k]
        k1x, k1c, u, velocities, heads = derivative(t, x, xi)
        states[k], controls[k], errors[k] = x, u, position_error(x)
        upwash[k] = -np.mean(velocities[:, :n_wing, 2], axis=1)
        wake_head[k] = heads
        if k == n_steps:
            break
        k2x, k2c, *_ = derivative(t + 0.5 * dt, x + 0.5 * dt * k1x, xi + 0.5 * dt * k1c)
        k3x, k3c, *_ = derivative(t + 0.5 * dt, x + 0.5 * dt * k2x, xi + 0.5 * dt * k2c)
        k4x, k4c, *_ = derivative(t + dt, x + dt * k3x, xi + dt * k3c)
        x = x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        xi = xi + dt / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c)

        magnitude = np.max(np.abs(x), axis=1)
        worst = int(np.argmax(magnitude))
        if not np.isfinite(magnitude[worst]) or magnitude[worst] > threshold:
            raise SimulationDivergedError(worst, float(times[k + 1]), float(magnitude[worst]))
        delay_line.push(times[k + 1], x[:, 1:3])

    INTEGRATION_STEPS.inc(n_steps)
    return SimTrace(
        t=times,
        states=states,
        controls=controls,
        errors=errors,
        upwash=upwash,
        wake_head=wake_head,
        trim_thrust_n=params.trimmed_thrust_n,
        scenario=sc,
    )


def run_scenario(
    sc: FormationScenario,
    model: LtiModel | None = None,
    params: AircraftParams | None = None,
    controller: Controller | None = None,
) -> SimTrace:
    with ErrorContext("run_scenario", scenario=sc.name, n_aircraft=sc.n_aircraft, steps=sc.n_steps):
        setup = _prepare(sc, model, params, controller)
        return _simulate(sc, setup, coupled=True, wake=sc.wake_enabled)


def solo_baseline(
    sc: FormationScenario,
    model: LtiModel | None = None,
    params: AircraftParams | None = None,
    controller: Controller | None = None,
) -> SimTrace:
    """Each aircraft flies alone on its nominal path through the same turbulence."""
    with ErrorContext("solo_baseline", scenario=sc.name, n_aircraft=sc.n_aircraft):
        setup = _prepare(sc, model, params, controller)
        return _simulate(sc, setup, coupled=False, wake=False)


def _window(trace: SimTrace, window: float) -> np.ndarray:
    duration = trace.t[-1] - trace.t[0]
    if window > duration + 1e-9:
        raise DomainError(f"energy window {window} s exceeds the {duration:.3f} s trace")
    return trace.t >= trace.t[-1] - window - 1e-9


def energy_report(
    trace: SimTrace,
    params: AircraftParams,
    window: float = 30.0,
    baseline: SimTrace | None = None,
) -> EnergyReport:
    mask = _window(trace, window)
    pct = trace.thrust_change_pct[mask]
    mean = pct.mean(axis=0)
    if baseline is not None:
        mean = mean - baseline.thrust_change_pct[_window(baseline, window)].mean(axis=0)
    std = pct.std(axis=0)
    mean_upwash = trace.upwash[mask].mean(axis=0)
    aircraft = [
        AircraftEnergy(
            aircraft=i,
            mean_thrust_change_pct=float(mean[i]),
            std_thrust_change_pct=float(std[i]),
            mean_upwash_mps=float(mean_upwash[i]),
            induced_drag_change_pct=100.0 * induced_drag_change(params, float(mean_upwash[i])),
        )
        for i in range(trace.n_aircraft)
    ]
    return EnergyReport(window_s=window, baseline_subtracted=baseline is not None, aircraft=aircraft)


def amplification_ratios(trace: SimTrace, transient: float | None = None) -> list[float | None]:
    """Peak error of each follower over the peak error of its leader."""
    if trace.n_aircraft < 3:
        raise DomainError(f"amplification needs at least 3 aircraft, got {trace.n_aircraft}")
    if transient is None:
        transient = trace.scenario.transient_s
    mask = trace.t >= trace.t[0] + transient
    if not np.any(mask):
        raise DomainError(f"transient skip {transient} s leaves no samples")
    peaks = np.max(np.abs(trace.errors[mask]), axis=(0, 2))
    ratios: list[float | None] = []
    for i in range(1, trace.n_aircraft):
        ratios.append(None if peaks[i - 1] < AMPLIFICATION_FLOOR_M else float(peaks[i] / peaks[i - 1]))
    return ratios


def run_ensemble(
    scenarios: Sequence[FormationScenario],
    jobs: int | None = None,
    model: LtiModel | None = None,
    params: AircraftParams | None = None,
) -> list[SimTrace]:
    """Run independent scenarios, in worker processes when jobs > 1."""
    jobs = jobs or get_settings().jobs
    run = partial(run_scenario, model=model, params=params)
    if jobs <= 1 or len(scenarios) <= 1:
        return [run(sc) for sc in scenarios]
    logger.info("ensemble_started", scenarios=len(scenarios), jobs=jobs)
    with ProcessPoolExecutor(max_workers=min(jobs, len(scenarios))) as pool:
        return list(pool.map(run, scenarios))
