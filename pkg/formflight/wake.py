"""Potential-flow wake kernels and the map from sampled external flow to dynamics disturbances.

Axes follow the aircraft state: x forward, y right, z down. Velocities returned by the
kernels are in those axes, so a positive v_z is downwash. `span_averaged_upwash` converts
to the upward-positive convention used by the drag formula.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import integrate

from formflight.errors import ConfigurationError, DomainError
from formflight.linmodel import (
    ANGLE_INDEX,
    POSITION_INDEX,
    RATE_INDEX,
    STATE_NAMES,
    VELOCITY_INDEX,
    AircraftParams,
    LtiModel,
)

logger = structlog.get_logger()

FOUR_PI = 4.0 * np.pi
OFFSET_STREAMWISE_SPANS = 10.0
LEG_SPACING_FACTOR = np.pi / 4.0
CORE_RADIUS_FACTOR = 0.05
DEFAULT_TAIL_ARM_M = 18.0
# station spacing b/64 sits well inside the vortex core radius
CORE_RESOLVING_STATIONS = 65


def _vector(value: Any, name: str) -> np.ndarray:
    arr = np.array(value, dtype=float).reshape(-1)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} must be a finite 3-vector, got {value!r}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class VortexFilament:
    """Straight vortex segment with circulation directed from p1 to p2."""

    p1: np.ndarray
    p2: np.ndarray
    circulation: float
    core_radius: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "p1", _vector(self.p1, "p1"))
        object.__setattr__(self, "p2", _vector(self.p2, "p2"))
        if np.array_equal(self.p1, self.p2):
            raise ConfigurationError("filament endpoints must differ")
        if self.core_radius < 0:
            raise ConfigurationError(f"core radius must be >= 0, got {self.core_radius}")


@dataclass(frozen=True, eq=False)
class HorseshoeVortex:
    """Bound segment at the head plus two legs trailing to x = -inf."""

    head: np.ndarray
    leg_spacing: float
    circulation: float
    core_radius: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "head", _vector(self.head, "head"))
        if self.leg_spacing <= 0:
            raise ConfigurationError(f"leg spacing must be > 0, got {self.leg_spacing}")
        if self.core_radius <= 0:
            raise ConfigurationError(f"core radius must be > 0, got {self.core_radius}")

    @classmethod
    def for_aircraft(cls, params: AircraftParams, head: Any) -> HorseshoeVortex:
        span = params.wingspan_m
        return cls(
            head=head,
            leg_spacing=span * LEG_SPACING_FACTOR,
            circulation=params.wake_circulation_m2ps,
            core_radius=CORE_RADIUS_FACTOR * span,
        )

    @property
    def left_corner(self) -> np.ndarray:
        return self.head - np.array([0.0, 0.5 * self.leg_spacing, 0.0])

    @property
    def right_corner(self) -> np.ndarray:
        return self.head + np.array([0.0, 0.5 * self.leg_spacing, 0.0])


def _segment_velocity(
    p1: np.ndarray, p2: np.ndarray, circulation: float, core: float, points: np.ndarray
) -> np.ndarray:
    r0 = p2 - p1
    r1 = points - p1
    r2 = points - p2
    cross = np.cross(r1, r2)
    denom = np.sum(cross**2, axis=-1) + core**2 * np.sum(r0**2, axis=-1)
    n1 = np.linalg.norm(r1, axis=-1, keepdims=True)
    n2 = np.linalg.norm(r2, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        u1 = np.where(n1 > 0, r1 / n1, 0.0)
        u2 = np.where(n2 > 0, r2 / n2, 0.0)
        along = np.sum(r0 * (u1 - u2), axis=-1)
        factor = np.where(denom > 0, circulation / FOUR_PI * along / denom, 0.0)
    return factor[..., None] * cross


def _leg_velocity(
    corner: np.ndarray, side: float, circulation: float, core: float, points: np.ndarray
) -> np.ndarray:
    # side +1: left leg, circulation running +x into the corner; -1: right leg
    rel = points - corner
    dx, dy, dz = rel[..., 0], rel[..., 1], rel[..., 2]
    rho_sq = dy**2 + dz**2
    dist = np.sqrt(dx**2 + rho_sq)
    denom = core**2 + rho_sq
    with np.errstate(divide="ignore", invalid="ignore"):
        along = np.where(dist > 0, 1.0 - dx / dist, 1.0)
        scale = np.where(denom > 0, side * circulation / FOUR_PI * along / denom, 0.0)
    return np.stack([np.zeros_like(scale), -dz * scale, dy * scale], axis=-1)


def induced_velocity(
    head: np.ndarray,
    leg_spacing: float,
    circulation: float,
    core_radius: float,
    points: np.ndarray,
) -> np.ndarray:
    """Horseshoe velocity with broadcasting over heads (..., 3) and points (..., 3)."""
    head = np.asarray(head, dtype=float)
    points = np.asarray(points, dtype=float)
    half = np.array([0.0, 0.5 * leg_spacing, 0.0])
    left = head - half
    right = head + half
    return (
        _segment_velocity(left, right, circulation, core_radius, points)
        + _leg_velocity(left, 1.0, circulation, core_radius, points)
        + _leg_velocity(right, -1.0, circulation, core_radius, points)
    )


def filament_velocity(f: VortexFilament, p: Any) -> np.ndarray:
    return _segment_velocity(f.p1, f.p2, f.circulation, f.core_radius, np.asarray(p, dtype=float))


def horseshoe_velocity(h: HorseshoeVortex, p: Any) -> np.ndarray:
    return induced_velocity(h.head, h.leg_spacing, h.circulation, h.core_radius, p)


def biot_savart_quadrature(
    h: HorseshoeVortex,
    p: Any,
    truncation_m: float | None = None,
    epsrel: float = 1e-10,
) -> np.ndarray:
    """Adaptive quadrature of the line integral over the head and truncated legs.

    Each filament's singular result is scaled by rho^2 / (rho^2 + r_c^2), with rho the
    distance to that filament's line, the same core factor the closed forms carry.
    """
    point = _vector(p, "p")
    if truncation_m is None:
        truncation_m = 1e5 * h.leg_spacing / LEG_SPACING_FACTOR
    back = np.array([truncation_m, 0.0, 0.0])
    segments = (
        (h.left_corner - back, h.left_corner),
        (h.left_corner, h.right_corner),
        (h.right_corner, h.right_corner - back),
    )
    total = np.zeros(3)
    for start, end in segments:
        direction = end - start
        length_sq = float(direction @ direction)

        def integrand(t: float, start=start, direction=direction) -> np.ndarray:
            r = point - (start + t * direction)
            return np.cross(direction, r) / np.linalg.norm(r) ** 3

        foot = float(np.clip((point - start) @ direction / length_sq, 0.0, 1.0))
        breaks = [foot] if 0.0 < foot < 1.0 else None
        raw, _ = integrate.quad_vec(
            integrand, 0.0, 1.0, epsabs=1e-14, epsrel=epsrel, points=breaks, limit=20000
        )
        rho_sq = float(np.sum(np.cross(direction, point - start) ** 2) / length_sq)
        total += h.circulation / FOUR_PI * raw * rho_sq / (rho_sq + h.core_radius**2)
    return total


def optimal_offset(params: AircraftParams) -> np.ndarray:
    """Follower offset behind its leader that puts the inner wingtip on the leader's leg."""
    span = params.wingspan_m
    return np.array(
        [OFFSET_STREAMWISE_SPANS * span, span * (1.0 + LEG_SPACING_FACTOR) / 2.0, 0.0]
    )


def wake_delay(streamwise_separation: float, speed: float) -> float:
    if speed <= 0:
        raise DomainError(f"speed must be positive, got {speed}")
    return streamwise_separation / speed


def span_averaged_upwash(
    h: HorseshoeVortex, wing_center: Any, span: float, n_stations: int
) -> float:
    """Mean upward-positive induced velocity over equally spaced spanwise stations."""
    if n_stations < 2:
        raise DomainError(f"need at least 2 spanwise stations, got {n_stations}")
    center = _vector(wing_center, "wing_center")
    points = np.repeat(center[None, :], n_stations, axis=0)
    points[:, 1] += np.linspace(-0.5 * span, 0.5 * span, n_stations)
    return float(-np.mean(horseshoe_velocity(h, points)[:, 2]))


def drag_coefficient(
    lift_coeff: float, zero_lift_drag: float, aspect_ratio: float, upwash: float, speed: float
) -> float:
    """Elliptic-wing drag with the lift-tilt credit of a uniform upwash."""
    if speed <= 0:
        raise DomainError(f"speed must be positive, got {speed}")
    if aspect_ratio <= 0:
        raise DomainError(f"aspect ratio must be positive, got {aspect_ratio}")
    return (
        zero_lift_drag
        + lift_coeff**2 / (np.pi * aspect_ratio)
        - lift_coeff * upwash / speed
    )


def induced_drag_change(params: AircraftParams, upwash: float) -> float:
    """Fractional drag change from a uniform upwash relative to clean air."""
    args = (params.lift_coefficient, params.zero_lift_drag_coeff, params.aspect_ratio)
    clean = drag_coefficient(*args, 0.0, params.cruise_speed_mps)
    return drag_coefficient(*args, upwash, params.cruise_speed_mps) / clean - 1.0


@dataclass(frozen=True, eq=False)
class GustSample:
    station: str
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", _vector(self.position, "position"))
        object.__setattr__(self, "velocity", _vector(self.velocity, "velocity"))


class SurfaceStations(BaseModel):
    """Body-frame sampling points: spanwise wing stations plus one tail station."""

    model_config = ConfigDict(frozen=True)

    wingspan_m: float = Field(34.1, gt=0.0)
    tail_arm_m: float = Field(DEFAULT_TAIL_ARM_M, gt=0.0)
    n_wing_stations: int = Field(CORE_RESOLVING_STATIONS, ge=3, le=401)

    @field_validator("n_wing_stations")
    @classmethod
    def validate_odd(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError("n_wing_stations must be odd so the center is sampled")
        return v

    @property
    def spacing_m(self) -> float:
        return self.wingspan_m / (self.n_wing_stations - 1)

    @property
    def center_index(self) -> int:
        return (self.n_wing_stations - 1) // 2

    @property
    def tail_index(self) -> int:
        return self.n_wing_stations

    @property
    def ids(self) -> tuple[str, ...]:
        names = []
        for k in range(self.n_wing_stations):
            if k == 0:
                names.append("left_tip")
            elif k == self.n_wing_stations - 1:
                names.append("right_tip")
            elif k == self.center_index:
                names.append("center")
            else:
                names.append(f"span_{k:02d}")
        return (*names, "tail")

    def offsets(self) -> np.ndarray:
        """Station offsets from the wing reference point, shape (n_wing + 1, 3)."""
        out = np.zeros((self.n_wing_stations + 1, 3))
        out[: self.n_wing_stations, 1] = np.linspace(
            -0.5 * self.wingspan_m, 0.5 * self.wingspan_m, self.n_wing_stations
        )
        out[self.tail_index, 0] = -self.tail_arm_m
        return out


@dataclass(frozen=True, eq=False)
class DisturbanceMap:
    """Linear map from stacked station velocities (n_stations, 3) to the 12-vector w."""

    matrix: np.ndarray
    stations: SurfaceStations

    @classmethod
    def build(cls, model: LtiModel, stations: SurfaceStations) -> DisturbanceMap:
        if model.n_states != len(STATE_NAMES):
            raise ConfigurationError(
                f"disturbance map needs the 12-state aircraft, got {model.n_states} states"
            )
        kinematic = list(POSITION_INDEX + ANGLE_INDEX)
        a_vel = model.a[:, VELOCITY_INDEX].copy()
        a_vel[kinematic] = 0.0
        # air rotation drives only the moment rows; the force rows' rate columns
        # hold the flight-path kinematics (the U*q term in z'')
        a_rate = np.zeros((len(STATE_NAMES), len(RATE_INDEX)))
        a_rate[list(RATE_INDEX)] = model.a[np.ix_(RATE_INDEX, RATE_INDEX)]

        n_wing = stations.n_wing_stations
        width = 3 * (n_wing + 1)
        mean_wing = np.zeros((3, width))
        for k in range(n_wing):
            mean_wing[:, 3 * k : 3 * k + 3] += np.eye(3) / n_wing

        # air rotation: roll from the tip-to-tip upwash difference, pitch from tail vs wing
        rotation = np.zeros((3, width))
        rotation[0, 3 * (n_wing - 1) + 2] += 1.0 / stations.wingspan_m
        rotation[0, 2] -= 1.0 / stations.wingspan_m
        rotation[1, 3 * stations.tail_index + 2] += 1.0 / stations.tail_arm_m
        rotation[1, 2::3][:n_wing] -= 1.0 / (stations.tail_arm_m * n_wing)

        matrix = -(a_vel @ mean_wing + a_rate @ rotation)
        matrix.setflags(write=False)
        return cls(matrix=matrix, stations=stations)

    def apply(self, velocities: np.ndarray) -> np.ndarray:
        """velocities (..., n_stations, 3) -> w (..., 12)."""
        v = np.asarray(velocities, dtype=float)
        return v.reshape(*v.shape[:-2], -1) @ self.matrix.T


def gust_to_disturbance(
    model: LtiModel, samples: Sequence[GustSample], stations: SurfaceStations
) -> np.ndarray:
    by_id = {s.station: s for s in samples}
    missing = [sid for sid in stations.ids if sid not in by_id]
    if missing:
        raise ConfigurationError(
            f"missing gust samples for stations: {', '.join(missing)}", diagnostics=missing
        )
    unknown = sorted(set(by_id) - set(stations.ids))
    if unknown:
        raise ConfigurationError(
            f"samples reference unknown stations: {', '.join(unknown)}", diagnostics=unknown
        )
    velocities = np.stack([by_id[sid].velocity for sid in stations.ids])
    return DisturbanceMap.build(model, stations).apply(velocities)
