"""Derivative-free tuning of the structured controller's K_p and K_d diagonals
under an H-infinity bound and closed-loop pole constraints."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import structlog

from formflight.control import GainSet, closed_loop, resolve_controller
from formflight.errors import ConfigurationError, ErrorContext, SynthesisError
from formflight.freqana import FrequencyGrid, sv_sweep
from formflight.linmodel import LtiModel, builtin_a320, eigenvalues
from formflight.metrics import OBJECTIVE_EVALUATIONS
from formflight.models.report import SynthesisReport
from formflight.models.scenario import SynthesisProblemConfig

logger = structlog.get_logger()

MASK_ENTRIES = ("kp_x", "kp_y", "kp_z", "kd_x", "kd_y", "kd_z")
PENALTY_WEIGHT = 1e3
UNSTABLE_PENALTY = 1e6
HINF_TOL = 1e-6
IMPROVEMENT_TOL = 1e-6
INITIAL_STEP = math.log(2.0)
MIN_STEP = 1e-4


@dataclass(frozen=True)
class SynthesisConstraints:
    hinf_bound: float = 1.0
    min_decay: float = 0.08
    max_frequency: float = 50.0


@dataclass(frozen=True, eq=False)
class SynthesisProblem:
    plant: LtiModel
    initial: GainSet
    mask: tuple[str, ...] = MASK_ENTRIES
    constraints: SynthesisConstraints = field(default_factory=SynthesisConstraints)
    max_evaluations: int = 2000
    n_starts: int = 8
    seed: int = 0
    grid: FrequencyGrid = field(default_factory=FrequencyGrid)
    headway: float = 0.0

    def __post_init__(self) -> None:
        unknown = [m for m in self.mask if m not in MASK_ENTRIES]
        if unknown or not self.mask:
            raise ConfigurationError(
                "tunable mask must name diagonal entries of K_p and K_d",
                diagnostics=unknown or ["empty mask"],
            )
        if not self.initial.is_diagonal:
            raise ConfigurationError("tunable configuration needs diagonal K_p and K_d")
        masked = self.diagonals[[MASK_ENTRIES.index(m) for m in self.mask]]
        if np.any(masked <= 0):
            raise ConfigurationError("tunable gains must start positive")
        if self.max_evaluations < 0:
            raise ConfigurationError("max_evaluations must be non-negative")

    @property
    def diagonals(self) -> np.ndarray:
        return np.concatenate([np.diag(self.initial.k_p), np.diag(self.initial.k_d)])

    @property
    def mask_index(self) -> list[int]:
        return [MASK_ENTRIES.index(m) for m in self.mask]

    def gains_for(self, theta: np.ndarray) -> GainSet:
        """Gains with the masked diagonal entries set to exp(theta)."""
        values = self.diagonals.copy()
        values[self.mask_index] = np.exp(theta)
        return self.initial.with_diagonals(values[:3], values[3:])


@dataclass(frozen=True)
class Evaluation:
    objective: float
    hinf_norm: float
    decay_rate: float
    max_pole_frequency: float

    @property
    def stable(self) -> bool:
        return self.decay_rate > 0


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    gains: GainSet
    hinf_norm: float
    decay_rate: float
    max_pole_frequency: float
    objective: float
    evaluations: int
    converged: bool
    history: tuple[float, ...] = ()

    def to_report(self, constraints: SynthesisConstraints) -> SynthesisReport:
        return SynthesisReport(
            hinf_norm=self.hinf_norm,
            decay_rate=self.decay_rate,
            max_pole_frequency_radps=self.max_pole_frequency,
            objective=self.objective,
            evaluations=self.evaluations,
            converged=self.converged,
            k_p_diag=np.diag(self.gains.k_p).tolist(),
            k_d_diag=np.diag(self.gains.k_d).tolist(),
            constraints={
                "hinf_bound": constraints.hinf_bound,
                "min_decay_per_s": constraints.min_decay,
                "max_frequency_radps": constraints.max_frequency,
            },
        )


def evaluate(problem: SynthesisProblem, gains: GainSet) -> Evaluation:
    t = closed_loop(problem.plant, gains, problem.headway)
    poles = eigenvalues(t)
    abscissa = float(poles[0].real)
    max_frequency = float(np.max(np.abs(poles)))
    c = problem.constraints
    if abscissa >= 0:
        return Evaluation(UNSTABLE_PENALTY + abscissa, math.inf, -abscissa, max_frequency)
    hinf = sv_sweep(t, problem.grid).peak
    decay = -abscissa
    value = (
        PENALTY_WEIGHT * max(hinf - c.hinf_bound, 0.0)
        + PENALTY_WEIGHT * max(c.min_decay - decay, 0.0)
        + PENALTY_WEIGHT * max(max_frequency - c.max_frequency, 0.0)
        + hinf
    )
    return Evaluation(value, hinf, decay, max_frequency)


def objective(problem: SynthesisProblem, gains: GainSet) -> float:
    OBJECTIVE_EVALUATIONS.inc()
    return evaluate(problem, gains).objective


def feasible(ev: Evaluation, constraints: SynthesisConstraints) -> bool:
    return (
        ev.stable
        and ev.hinf_norm <= constraints.hinf_bound + HINF_TOL
        and ev.decay_rate >= constraints.min_decay
        and ev.max_pole_frequency <= constraints.max_frequency
    )


class _Budget:
    def __init__(self, problem: SynthesisProblem):
        self.problem = problem
        self.used = 0
        self.best_theta: np.ndarray | None = None
        self.best_value = math.inf
        self.history: list[float] = []

    @property
    def exhausted(self) -> bool:
        return self.used >= self.problem.max_evaluations

    def __call__(self, theta: np.ndarray) -> float:
        self.used += 1
        value = objective(self.problem, self.problem.gains_for(theta))
        if value < self.best_value:
            self.best_value, self.best_theta = value, theta.copy()
        self.history.append(self.best_value)
        return value


def _pattern_search(f: _Budget, theta: np.ndarray, value: float) -> tuple[np.ndarray, float]:
    """Coordinate moves in log-gain space, doubling the step on success and halving on a failed sweep."""
    step = INITIAL_STEP
    while step > MIN_STEP and not f.exhausted:
        sweep_start = value
        for k in range(theta.size):
            for direction in (1.0, -1.0):
                if f.exhausted:
                    return theta, value
                trial = theta.copy()
                trial[k] += direction * step
                trial_value = f(trial)
                if trial_value < value:
                    theta, value = trial, trial_value
                    break
        if sweep_start - value < IMPROVEMENT_TOL * max(1.0, abs(sweep_start)):
            step *= 0.5
        else:
            step = min(2.0 * step, 4.0 * INITIAL_STEP)
    return theta, value


def tune(problem: SynthesisProblem) -> SynthesisResult:
    with ErrorContext("tune", mask=list(problem.mask), budget=problem.max_evaluations):
        theta0 = np.log(problem.diagonals[problem.mask_index])
        f = _Budget(problem)

        start = evaluate(problem, problem.initial)
        if not start.stable:
            logger.warning("initial_closed_loop_unstable", decay_rate=start.decay_rate)

        if problem.max_evaluations > 0:
            # multi-start: the unscaled point plus seeded log-scalings
            rng = np.random.default_rng(problem.seed)
            starts = [theta0] + [
                theta0 + rng.uniform(-math.log(4.0), math.log(4.0), theta0.size)
                for _ in range(problem.n_starts - 1)
            ]
            scored = []
            for candidate in starts:
                if f.exhausted:
                    break
                scored.append((f(candidate), candidate))
            value, theta = min(scored, key=lambda item: item[0])
            _pattern_search(f, theta, value)

        gains = problem.initial if f.best_theta is None else problem.gains_for(f.best_theta)
        # fresh evaluation, independent of the search bookkeeping
        check = evaluate(problem, gains)
        converged = problem.max_evaluations > 0 and feasible(check, problem.constraints)
        logger.info(
            "synthesis_finished",
            evaluations=f.used,
            hinf_norm=check.hinf_norm,
            decay_rate=check.decay_rate,
            max_pole_frequency=check.max_pole_frequency,
            converged=converged,
        )
        return SynthesisResult(
            gains=gains,
            hinf_norm=check.hinf_norm,
            decay_rate=check.decay_rate,
            max_pole_frequency=check.max_pole_frequency,
            objective=check.objective,
            evaluations=f.used,
            converged=converged,
            history=tuple(f.history),
        )


def build_problem(config: SynthesisProblemConfig, plant: LtiModel | None = None) -> SynthesisProblem:
    if plant is None:
        plant, _ = builtin_a320()
    initial = resolve_controller(config.controller)
    if not isinstance(initial, GainSet):
        raise SynthesisError("synthesis needs structured gains as the starting point")
    if not initial.is_diagonal:
        raise ConfigurationError("tunable configuration needs diagonal K_p and K_d")
    initial = initial.with_diagonals(
        config.scale_kp * np.diag(initial.k_p), config.scale_kd * np.diag(initial.k_d)
    )
    return SynthesisProblem(
        plant=plant,
        initial=initial,
        mask=config.mask,
        constraints=SynthesisConstraints(
            hinf_bound=config.hinf_bound,
            min_decay=config.min_decay_per_s,
            max_frequency=config.max_frequency_radps,
        ),
        max_evaluations=config.max_evaluations,
        n_starts=config.n_starts,
        seed=config.seed,
        grid=FrequencyGrid(config.grid_start_radps, config.grid_stop_radps, config.grid_points),
    )
