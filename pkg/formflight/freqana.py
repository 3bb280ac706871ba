"""Frequency-domain analysis: complementary sensitivity, singular-value sweeps,
string-stability verdicts, system type and the Bode integral constraints."""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass
from typing import Any

import numpy as np
import structlog
from scipy import integrate, optimize

from formflight.control import Controller, closed_loop, loop_transfer
from formflight.errors import DomainError
from formflight.linmodel import LtiModel, RationalTF, spectral_abscissa
from formflight.models.report import StringStabilityReport

logger = structlog.get_logger()

ORIGIN_TOL = 1e-8
RHP_TOL = 1e-9
PEAK_TOL = 1e-6
MARGINAL_BAND = 1e-3


@dataclass(frozen=True)
class FrequencyGrid:
    """Log-spaced angular frequencies in rad/s."""

    start: float = 1e-3
    stop: float = 1e3
    n_points: int = 400

    def __post_init__(self) -> None:
        if not 0 < self.start < self.stop:
            raise DomainError(f"grid needs 0 < start < stop, got [{self.start}, {self.stop}]")
        if self.n_points < 2:
            raise DomainError(f"grid needs at least 2 points, got {self.n_points}")

    @property
    def omega(self) -> np.ndarray:
        return np.logspace(math.log10(self.start), math.log10(self.stop), self.n_points)


@dataclass(frozen=True, eq=False)
class SweepResult:
    omega: np.ndarray
    sigma_max: np.ndarray
    peak: float
    peak_frequency: float


def complementary_sensitivity(
    plant: LtiModel, controller: Controller, headway: float = 0.0
) -> LtiModel:
    """T(s) from the leader's position to the follower's, as a state-space system."""
    return closed_loop(plant, controller, headway)


def sensitivity_response(
    plant: LtiModel, controller: Controller, omega: Any, headway: float = 0.0
) -> np.ndarray:
    """S(jw) = (I + L(jw))^-1 from the loop transfer, shape (N, 3, 3)."""
    response = loop_transfer(plant, controller, headway).frequency_response(omega)
    eye = np.eye(response.shape[-1])
    return np.linalg.solve(eye + response, np.broadcast_to(eye, response.shape))


def _max_singular_value(system: LtiModel, omega: Any) -> np.ndarray:
    return np.linalg.svd(system.frequency_response(omega), compute_uv=False)[:, 0]


def _spectral_radius(system: LtiModel, omega: Any) -> np.ndarray:
    return np.max(np.abs(np.linalg.eigvals(system.frequency_response(omega))), axis=-1)


def _refined_sweep(
    gain: Callable[[LtiModel, Any], np.ndarray], system: LtiModel, grid: FrequencyGrid | None
) -> SweepResult:
    grid = grid or FrequencyGrid()
    omega = grid.omega
    values = gain(system, omega)
    k = int(np.argmax(values))
    peak, peak_frequency = float(values[k]), float(omega[k])

    if 0 < k < omega.size - 1:
        bracket = (math.log(omega[k - 1]), math.log(omega[k]), math.log(omega[k + 1]))
        try:
            res = optimize.minimize_scalar(
                lambda u: -gain(system, math.exp(u))[0],
                bracket=bracket,
                method="golden",
                options={"xtol": 1e-10},
            )
        except ValueError:
            # flat neighbourhood: no strict bracket
            res = None
        if res is not None and -res.fun > peak:
            peak, peak_frequency = float(-res.fun), float(math.exp(res.x))

    return SweepResult(omega=omega, sigma_max=values, peak=peak, peak_frequency=peak_frequency)


def sv_sweep(system: LtiModel, grid: FrequencyGrid | None = None) -> SweepResult:
    """Refined peak of the largest singular value of T(jw)."""
    return _refined_sweep(_max_singular_value, system, grid)


def growth_sweep(system: LtiModel, grid: FrequencyGrid | None = None) -> SweepResult:
    """Refined peak of the spectral radius of T(jw).

    A cascade of n identical links has the response T^n, whose size grows without
    bound in n exactly where the spectral radius exceeds one.
    """
    return _refined_sweep(_spectral_radius, system, grid)


def channel_magnitudes(system: LtiModel, omega: Any) -> np.ndarray:
    """|T_kk(jw)| for each diagonal channel, shape (N, p)."""
    response = system.frequency_response(omega)
    return np.abs(np.diagonal(response, axis1=1, axis2=2))


def _verdict(stable: bool, growth: float, sigma: float) -> str:
    if not stable or growth > 1.0 + PEAK_TOL:
        return "unstable"
    # bounded down the string, but a single link still amplifies some direction
    if sigma > 1.0 + MARGINAL_BAND:
        return "marginal"
    return "stable"


def string_stable(
    plant: LtiModel,
    controller: Controller,
    grid: FrequencyGrid | None = None,
    headway: float = 0.0,
    label: str = "custom",
) -> StringStabilityReport:
    t = complementary_sensitivity(plant, controller, headway)
    abscissa = spectral_abscissa(t)
    stable = abscissa < 0
    sweep = sv_sweep(t, grid)
    growth = growth_sweep(t, grid)
    channels = channel_magnitudes(t, sweep.omega).max(axis=0)
    verdict = _verdict(stable, growth.peak, sweep.peak)
    logger.info(
        "string_stability_checked",
        controller=label,
        verdict=verdict,
        peak_sigma=sweep.peak,
        peak_growth=growth.peak,
        peak_frequency_radps=sweep.peak_frequency,
        spectral_abscissa=abscissa,
    )
    return StringStabilityReport(
        controller=label,
        peak_sigma=sweep.peak,
        peak_frequency_radps=sweep.peak_frequency,
        peak_growth=growth.peak,
        growth_frequency_radps=growth.peak_frequency,
        channel_peaks=channels.tolist(),
        verdict=verdict,
        closed_loop_stable=stable,
        spectral_abscissa=abscissa,
        headway_s=headway,
        omega_radps=sweep.omega.tolist(),
        sigma_max=sweep.sigma_max.tolist(),
    )


def _origin_count(roots: np.ndarray, origin_tol: float) -> int:
    return int(np.count_nonzero(np.abs(roots) < origin_tol))


def system_type(tf: RationalTF, origin_tol: float = ORIGIN_TOL) -> int:
    """Pure integrators: origin poles minus origin zeros."""
    return _origin_count(tf.poles(), origin_tol) - _origin_count(tf.zeros(), origin_tol)


def velocity_error_constant(tf: RationalTF, origin_tol: float = ORIGIN_TOL) -> float:
    """lim s->0 of s G(s)."""
    kind = system_type(tf, origin_tol)
    if kind >= 2:
        return math.inf
    if kind <= 0 or tf.is_zero:
        return 0.0
    zeros = tf.zeros()
    poles = tf.poles()
    zeros = zeros[np.abs(zeros) >= origin_tol]
    poles = poles[np.abs(poles) >= origin_tol]
    # remaining origin roots cancel pairwise, leaving exactly one free 1/s
    gain = tf.num[0] * np.prod(-zeros) / np.prod(-poles)
    return float(np.real(gain))


def rhp_zeros(tf: RationalTF) -> np.ndarray:
    zeros = tf.zeros()
    return zeros[zeros.real > RHP_TOL]


def steady_state_ramp_error(open_loop: RationalTF) -> float:
    closed = open_loop.feedback()
    if np.any(closed.poles().real >= 0):
        raise DomainError("unity-feedback loop is not stable")
    kv = velocity_error_constant(open_loop)
    if math.isinf(kv):
        return 0.0
    if kv == 0.0:
        return math.inf
    return 1.0 / kv


def _even_square(poly: np.ndarray) -> np.ndarray:
    """Coefficients of p(s) p(-s) as a polynomial in x = s^2."""
    degree = poly.size - 1
    flipped = poly * (-1.0) ** np.arange(degree, -1, -1)
    return np.polymul(poly, flipped)[::2]


def _log1p_tail(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """log(E(x) / E(0)) without cancellation for small x."""
    if coeffs.size == 1:
        return np.zeros_like(x)
    return np.log1p(np.polyval(coeffs[:-1], x) * x / coeffs[-1])


def _log1p_head(coeffs: np.ndarray, z: np.ndarray) -> np.ndarray:
    """log(E(x) / (e0 x^n)) with z = 1/x, without cancellation for large |x|."""
    if coeffs.size == 1:
        return np.zeros_like(z)
    return np.log1p(np.polyval(coeffs[:0:-1] / coeffs[0], z) * z)


def _linear_ratio(coeffs: np.ndarray) -> float:
    return float(coeffs[-2] / coeffs[-1]) if coeffs.size > 1 else 0.0


def _root_scales(*tfs: RationalTF) -> tuple[float, float]:
    roots = np.concatenate([np.concatenate([tf.poles(), tf.zeros()]) for tf in tfs])
    mags = np.abs(roots)
    mags = mags[mags >= ORIGIN_TOL]
    if mags.size == 0:
        return 1.0, 1.0
    return min(1.0, float(mags.min())), max(1.0, float(mags.max()))


def _log_integral(func: Any, lo: float, hi: float, breakpoints: np.ndarray) -> float:
    points = [math.log(p) for p in breakpoints if lo < p < hi]
    value, _ = integrate.quad(
        lambda u: func(math.exp(u)) * math.exp(u),
        math.log(lo),
        math.log(hi),
        points=sorted(set(points)) or None,
        limit=500,
        epsabs=1e-11,
        epsrel=1e-10,
    )
    return float(value)


@dataclass(frozen=True)
class BodeIntegral:
    lhs: float
    rhs: float

    @property
    def finite(self) -> bool:
        return math.isfinite(self.rhs)


def bode_T_integral(t: RationalTF, open_loop: RationalTF) -> BodeIntegral:
    """Integral of ln|T(jw)|/w^2 over (0, inf) and its value implied by K_v and the RHP zeros."""
    kv = velocity_error_constant(open_loop)
    if kv == 0.0:
        return BodeIntegral(lhs=math.nan, rhs=math.inf)
    rhs = (0.0 if math.isinf(kv) else -math.pi / (2.0 * kv)) + math.pi * float(
        np.real(np.sum(1.0 / rhp_zeros(open_loop)))
    )

    e_num, e_den = _even_square(t.num), _even_square(t.den)
    log_dc = 0.5 * math.log(e_num[-1] / e_den[-1])
    if abs(log_dc) > 1e-9:
        return BodeIntegral(lhs=math.copysign(math.inf, log_dc), rhs=rhs)

    def log_mag(omega: float) -> float:
        x = np.array(-(omega**2))
        return float(0.5 * (_log1p_tail(e_num, x) - _log1p_tail(e_den, x)))

    small, large = _root_scales(t)
    lo, hi = 1e-5 * small, 1e5 * large
    # ln|T|/w^2 tends to a constant fixed by the x-coefficients of both even squares
    head = -0.5 * (_linear_ratio(e_num) - _linear_ratio(e_den)) * lo

    body = _log_integral(
        lambda w: log_mag(w) / w**2, lo, hi, np.abs(np.concatenate([t.poles(), t.zeros()]))
    )
    lead = math.log(abs(t.num[0]))
    r = t.relative_degree
    tail = (lead - r * (math.log(hi) + 1.0)) / hi
    lhs = head + body + tail
    logger.debug("bode_t_integral", lhs=lhs, rhs=rhs, velocity_constant=kv)
    return BodeIntegral(lhs=lhs, rhs=rhs)


def bode_S_integral(s: RationalTF) -> float:
    """Integral of ln|S(jw)| over (0, inf) for a stable loop of relative degree two or more."""
    if s.num.shape == s.den.shape and np.array_equal(s.num, s.den):
        return 0.0
    if s.num.size != s.den.size or not math.isclose(s.num[0], 1.0, rel_tol=1e-9):
        raise DomainError("not a sensitivity function: S must tend to 1 at high frequency")
    if s.num.size < 2 or not math.isclose(
        s.num[1], s.den[1], rel_tol=1e-9, abs_tol=1e-12 * max(1.0, abs(s.den[1]))
    ):
        raise DomainError("open loop must have relative degree of at least two")
    if np.any(s.zeros().real > RHP_TOL):
        raise DomainError("open loop has right half-plane poles")

    e_num, e_den = _even_square(s.num), _even_square(s.den)

    def log_mag(omega: float) -> float:
        z = np.array(-1.0 / omega**2)
        return float(0.5 * (_log1p_head(e_num, z) - _log1p_head(e_den, z)))

    small, large = _root_scales(s)
    lo, hi = 1e-6 * small, 1e5 * large
    origin_zeros = _origin_count(s.zeros(), ORIGIN_TOL)
    head = lo * (log_mag(lo) - origin_zeros)
    body = _log_integral(log_mag, lo, hi, np.abs(np.concatenate([s.poles(), s.zeros()])))
    tail = -(e_num[1] - e_den[1]) / (2.0 * e_num[0] * hi) if e_num.size > 1 else 0.0
    return head + body + tail
