"""Linearized aircraft dynamics, state conventions and transfer-function conversion."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import orjson
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator

from formflight.errors import ConfigurationError, NumericalError, TransferFunctionError

logger = structlog.get_logger()

GRAVITY = 9.81

STATE_NAMES: tuple[str, ...] = (
    "x",
    "y",
    "z",
    "xdot",
    "ydot",
    "zdot",
    "phi",
    "theta",
    "psi",
    "phidot",
    "thetadot",
    "psidot",
)
CONTROL_NAMES: tuple[str, ...] = ("thrust", "aileron", "elevator", "rudder")
POSITION_NAMES: tuple[str, ...] = ("x", "y", "z")

THRUST, AILERON, ELEVATOR, RUDDER = range(4)

POSITION_INDEX = (0, 1, 2)
VELOCITY_INDEX = (3, 4, 5)
ATTITUDE_INDEX = (6, 7, 8, 9, 10, 11)
ANGLE_INDEX = (6, 7, 8)
RATE_INDEX = (9, 10, 11)

# (x, z, xdot, zdot, theta, thetadot) and (y, ydot, phi, psi, phidot, psidot)
LONGITUDINAL_INDEX = (0, 2, 3, 5, 7, 10)
LATERAL_INDEX = (1, 4, 6, 8, 9, 11)

CONDITION_LIMIT = 1e12

_A_LONG = (
    (0.0, 0.0, 1.0, 0.0, 0.0, 0.0),
    (0.0, 0.0, 0.0, 1.0, 0.0, 0.0),
    (0.0, 0.0, -5.45e-3, 3.61e-2, -1.51, -6.42e-2),
    (0.0, 0.0, -8.52e-2, -0.445, -102.0, 227.0),
    (0.0, 0.0, 0.0, 0.0, 0.0, 1.0),
    (0.0, 0.0, 0.0, -4.18e-2, -9.62, -0.960),
)
_A_LAT = (
    (0.0, 1.0, 0.0, 0.0, 0.0, 0.0),
    (0.0, -3.57e-2, 9.81, 8.22, -0.167, -230.0),
    (0.0, 0.0, 0.0, 0.0, 1.0, 0.0),
    (0.0, 0.0, 0.0, 0.0, 0.0, 1.0),
    (0.0, -1.10e-2, 0.0, 2.52, -0.395, 0.193),
    (0.0, 6.29e-3, 0.0, -1.45, -4.76e-3, -0.135),
)
_B_LONG = (
    (0.0, 0.0, 0.0, 0.0),
    (0.0, 0.0, 0.0, 0.0),
    (1.25e-5, 0.0, -0.138, 0.0),
    (0.0, 0.0, -7.20, 0.0),
    (0.0, 0.0, 0.0, 0.0),
    (0.0, 0.0, -3.50, 0.0),
)
_B_LAT = (
    (0.0, 0.0, 0.0, 0.0),
    (0.0, 0.487, 0.0, 4.59),
    (0.0, 0.0, 0.0, 0.0),
    (0.0, 0.0, 0.0, 0.0),
    (0.0, 1.08, 0.0, 0.418),
    (0.0, -1.82e-2, 0.0, -0.960),
)


class AircraftParams(BaseModel):
    """Geometry and cruise condition of the formation aircraft."""

    model_config = ConfigDict(frozen=True)

    mass_kg: float = Field(80000.0, gt=0.0)
    wingspan_m: float = Field(34.1, gt=0.0)
    mean_chord_m: float = Field(3.6, gt=0.0)
    cruise_speed_mps: float = Field(230.0, gt=0.0)
    air_density_kgpm3: float = Field(0.458, gt=0.0)
    tail_span_m: float = Field(12.5, gt=0.0)
    vertical_tail_span_m: float = Field(6.2, gt=0.0)
    trimmed_thrust_n: float = Field(5.02e4, gt=0.0)
    zero_lift_drag_coeff: float = Field(0.03, gt=0.0)
    wake_circulation_m2ps: float = Field(278.0, gt=0.0)

    @model_validator(mode="after")
    def validate_aspect_ratio(self) -> AircraftParams:
        if self.aspect_ratio <= 1.0:
            raise ValueError(
                f"aspect ratio must exceed 1 (wingspan {self.wingspan_m} m, "
                f"mean chord {self.mean_chord_m} m)"
            )
        return self

    @property
    def aspect_ratio(self) -> float:
        return self.wingspan_m / self.mean_chord_m

    @property
    def wing_area_m2(self) -> float:
        return self.wingspan_m * self.mean_chord_m

    @property
    def lift_coefficient(self) -> float:
        """Trim lift coefficient from lift = weight."""
        dynamic_pressure = 0.5 * self.air_density_kgpm3 * self.cruise_speed_mps**2
        return self.mass_kg * GRAVITY / (dynamic_pressure * self.wing_area_m2)


def _readonly(value: Any, name: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def selector(indices: Sequence[int], n: int) -> np.ndarray:
    """Rows of the n-identity picking the given states."""
    return np.eye(n)[list(indices)]


@dataclass(frozen=True, eq=False)
class LtiModel:
    """Continuous-time state-space system x' = Ax + Bu, y = Cx + Du."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray | None = None
    d: np.ndarray | None = None
    state_names: tuple[str, ...] = ()
    input_names: tuple[str, ...] = ()
    output_names: tuple[str, ...] = ()
    position_selector: np.ndarray | None = None
    velocity_selector: np.ndarray | None = None
    attitude_selector: np.ndarray | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        a = _readonly(self.a, "A")
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ConfigurationError(f"A must be square, got shape {a.shape}")
        n = a.shape[0]
        b = _readonly(self.b, "B")
        if b.ndim == 1:
            b = _readonly(b.reshape(n, -1) if b.size else np.zeros((n, 0)), "B")
        if b.shape[0] != n:
            raise ConfigurationError(f"B must have {n} rows, got shape {b.shape}")
        c = _readonly(np.eye(n) if self.c is None else self.c, "C")
        if c.ndim != 2 or c.shape[1] != n:
            raise ConfigurationError(f"C must have {n} columns, got shape {c.shape}")
        d = _readonly(np.zeros((c.shape[0], b.shape[1])) if self.d is None else self.d, "D")
        if d.shape != (c.shape[0], b.shape[1]):
            raise ConfigurationError(
                f"D must have shape {(c.shape[0], b.shape[1])}, got shape {d.shape}"
            )
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", d)

        names = {
            "state_names": (self.state_names, n, "x"),
            "input_names": (self.input_names, b.shape[1], "u"),
            "output_names": (self.output_names, c.shape[0], "y"),
        }
        for attr, (given, size, prefix) in names.items():
            if not given:
                object.__setattr__(self, attr, tuple(f"{prefix}{k}" for k in range(size)))
            elif len(given) != size:
                raise ConfigurationError(f"{attr} has {len(given)} entries, expected {size}")
            else:
                object.__setattr__(self, attr, tuple(given))

        for attr in ("position_selector", "velocity_selector", "attitude_selector"):
            sel = getattr(self, attr)
            if sel is None:
                continue
            sel = _readonly(sel, attr)
            if sel.ndim != 2 or sel.shape[1] != n:
                raise ConfigurationError(f"{attr} must have {n} columns, got shape {sel.shape}")
            object.__setattr__(self, attr, sel)

    @property
    def n_states(self) -> int:
        return self.a.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.b.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.c.shape[0]

    def evaluate(self, s: Any) -> np.ndarray:
        """Transfer matrix C(sI - A)^-1 B + D at each complex point, shape (N, p, m)."""
        points = np.atleast_1d(np.asarray(s, dtype=complex))
        n = self.n_states
        if n == 0:
            return np.broadcast_to(self.d, (points.size, *self.d.shape)).astype(complex)
        pencil = points[:, None, None] * np.eye(n) - self.a
        rhs = np.broadcast_to(self.b, (points.size, *self.b.shape))
        try:
            x = np.linalg.solve(pencil, rhs)
        except np.linalg.LinAlgError as e:
            raise NumericalError(f"frequency response evaluated at a pole: {e}") from e
        return self.c @ x + self.d

    def frequency_response(self, omega: Any) -> np.ndarray:
        return self.evaluate(1j * np.asarray(omega, dtype=float))

    def subsystem(
        self,
        states: Sequence[int],
        inputs: Sequence[int] | None = None,
        outputs: Sequence[int] | None = None,
    ) -> LtiModel:
        """Restrict to a subset of states, inputs and outputs (no coupling compensation)."""
        states = list(states)
        inputs = list(range(self.n_inputs)) if inputs is None else list(inputs)
        outputs = list(range(self.n_outputs)) if outputs is None else list(outputs)
        return LtiModel(
            a=self.a[np.ix_(states, states)],
            b=self.b[np.ix_(states, inputs)],
            c=self.c[np.ix_(outputs, states)],
            d=self.d[np.ix_(outputs, inputs)],
            state_names=tuple(self.state_names[k] for k in states),
            input_names=tuple(self.input_names[k] for k in inputs),
            output_names=tuple(self.output_names[k] for k in outputs),
        )

    def _aircraft_block(self, index: Sequence[int]) -> LtiModel:
        if self.n_states != len(STATE_NAMES):
            raise ConfigurationError(
                f"longitudinal/lateral split needs the 12-state aircraft, got {self.n_states}"
            )
        block = list(index)
        return LtiModel(
            a=self.a[np.ix_(block, block)],
            b=self.b[block],
            state_names=tuple(self.state_names[k] for k in block),
            input_names=self.input_names,
            output_names=tuple(self.state_names[k] for k in block),
        )

    def longitudinal(self) -> LtiModel:
        return self._aircraft_block(LONGITUDINAL_INDEX)

    def lateral(self) -> LtiModel:
        return self._aircraft_block(LATERAL_INDEX)

    def to_dict(self) -> dict[str, Any]:
        return {
            "A": self.a.tolist(),
            "B": self.b.tolist(),
            "C": self.c.tolist(),
            "D": self.d.tolist(),
            "state_names": list(self.state_names),
            "input_names": list(self.input_names),
            "output_names": list(self.output_names),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> LtiModel:
        try:
            a = np.asarray(data["A"], dtype=float)
            b = np.asarray(data["B"], dtype=float)
        except KeyError as e:
            raise ConfigurationError(f"model document is missing {e.args[0]!r}") from e
        n = a.shape[0] if a.ndim == 2 else 0
        kwargs: dict[str, Any] = {
            "c": data.get("C"),
            "d": data.get("D"),
            "state_names": tuple(data.get("state_names", ())),
            "input_names": tuple(data.get("input_names", ())),
            "output_names": tuple(data.get("output_names", ())),
        }
        if n == len(STATE_NAMES):
            kwargs["position_selector"] = selector(POSITION_INDEX, n)
            kwargs["velocity_selector"] = selector(VELOCITY_INDEX, n)
            kwargs["attitude_selector"] = selector(ATTITUDE_INDEX, n)
        return cls(a=a, b=b, **kwargs)


def builtin_a320() -> tuple[LtiModel, AircraftParams]:
    """The linearized cruise model and aircraft data used throughout the toolkit."""
    n = len(STATE_NAMES)
    a = np.zeros((n, n))
    b = np.zeros((n, len(CONTROL_NAMES)))
    for block, a_block, b_block in (
        (LONGITUDINAL_INDEX, _A_LONG, _B_LONG),
        (LATERAL_INDEX, _A_LAT, _B_LAT),
    ):
        a[np.ix_(block, block)] = a_block
        b[list(block)] = b_block

    model = LtiModel(
        a=a,
        b=b,
        state_names=STATE_NAMES,
        input_names=CONTROL_NAMES,
        output_names=STATE_NAMES,
        position_selector=selector(POSITION_INDEX, n),
        velocity_selector=selector(VELOCITY_INDEX, n),
        attitude_selector=selector(ATTITUDE_INDEX, n),
    )
    return model, AircraftParams()


def model_to_json(model: LtiModel, params: AircraftParams | None = None) -> bytes:
    doc: dict[str, Any] = {"A": model.a.tolist(), "B": model.b.tolist()}
    if params is not None:
        doc["params"] = params.model_dump()
    return orjson.dumps(doc, option=orjson.OPT_INDENT_2)


def model_from_json(payload: bytes | str) -> tuple[LtiModel, AircraftParams]:
    try:
        doc = orjson.loads(payload)
    except orjson.JSONDecodeError as e:
        raise ConfigurationError(f"model document is not valid JSON: {e}") from e
    model = LtiModel.from_dict(doc)
    params = AircraftParams(**doc.get("params", {}))
    return model, params


@dataclass(frozen=True, eq=False)
class RationalTF:
    """SISO transfer function num(s)/den(s), coefficients in descending powers."""

    num: np.ndarray
    den: np.ndarray

    def __post_init__(self) -> None:
        num = np.trim_zeros(np.atleast_1d(np.asarray(self.num, dtype=float)), "f")
        den = np.trim_zeros(np.atleast_1d(np.asarray(self.den, dtype=float)), "f")
        if den.size == 0:
            raise ConfigurationError("denominator must be a nonzero polynomial")
        if num.size == 0:
            num = np.zeros(1)
        if num.size > den.size:
            raise ConfigurationError(
                f"transfer function is improper: numerator degree {num.size - 1} exceeds "
                f"denominator degree {den.size - 1}"
            )
        lead = den[0]
        object.__setattr__(self, "num", _readonly(num / lead, "numerator"))
        object.__setattr__(self, "den", _readonly(den / lead, "denominator"))

    @classmethod
    def integrator(cls) -> RationalTF:
        return cls(np.array([1.0]), np.array([1.0, 0.0]))

    def __call__(self, s: Any) -> Any:
        return np.polyval(self.num, s) / np.polyval(self.den, s)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.num)

    def poles(self) -> np.ndarray:
        return np.roots(self.den)

    def zeros(self) -> np.ndarray:
        return np.array([], dtype=complex) if self.is_zero else np.roots(self.num)

    @property
    def relative_degree(self) -> int:
        return self.den.size - self.num.size

    @property
    def leading_gain(self) -> float:
        return float(self.num[0])

    def scale(self, k: float) -> RationalTF:
        return RationalTF(self.num * k, self.den)

    def __mul__(self, other: RationalTF | float) -> RationalTF:
        if isinstance(other, RationalTF):
            return RationalTF(np.polymul(self.num, other.num), np.polymul(self.den, other.den))
        return self.scale(float(other))

    __rmul__ = __mul__

    def __add__(self, other: RationalTF | float) -> RationalTF:
        if not isinstance(other, RationalTF):
            other = RationalTF(np.array([float(other)]), np.array([1.0]))
        if self.den.shape == other.den.shape and np.array_equal(self.den, other.den):
            return RationalTF(np.polyadd(self.num, other.num), self.den)
        return RationalTF(
            np.polyadd(np.polymul(self.num, other.den), np.polymul(other.num, self.den)),
            np.polymul(self.den, other.den),
        )

    def feedback(self) -> RationalTF:
        """Unity negative feedback G/(1 + G)."""
        return RationalTF(self.num, np.polyadd(self.den, self.num))

    def sensitivity(self) -> RationalTF:
        """1/(1 + G) for this open loop."""
        return RationalTF(self.den, np.polyadd(self.den, self.num))


def _closure(pattern: np.ndarray, seeds: np.ndarray) -> set[int]:
    """States reachable from seeds along pattern[i, j] (j drives i)."""
    found = {int(k) for k in np.flatnonzero(seeds)}
    frontier = list(found)
    while frontier:
        j = frontier.pop()
        for i in np.flatnonzero(pattern[:, j]):
            if int(i) not in found:
                found.add(int(i))
                frontier.append(int(i))
    return found


def structural_states(model: LtiModel, input_index: int, output_index: int) -> list[int]:
    """States both excited by the input and seen by the output, from the sparsity pattern."""
    pattern = model.a != 0
    reachable = _closure(pattern, model.b[:, input_index] != 0)
    observable = _closure(pattern.T, model.c[output_index] != 0)
    return sorted(reachable & observable)


def structural_poles(a: np.ndarray) -> np.ndarray:
    """Eigenvalues with states having an all-zero row or column peeled off as exact zeros."""
    remaining = list(range(a.shape[0]))
    origin = 0
    peeled = True
    while peeled and remaining:
        peeled = False
        block = a[np.ix_(remaining, remaining)]
        for k in range(len(remaining)):
            if not block[:, k].any() or not block[k, :].any():
                remaining.pop(k)
                origin += 1
                peeled = True
                break
    try:
        rest = np.linalg.eigvals(a[np.ix_(remaining, remaining)]) if remaining else np.array([])
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"eigenvalue computation did not converge: {e}") from e
    return np.concatenate([np.zeros(origin, dtype=complex), rest.astype(complex)])


def transfer_function(model: LtiModel, input_index: int, output_index: int) -> RationalTF:
    """SISO transfer function from one input to one output."""
    if not 0 <= input_index < model.n_inputs:
        raise ConfigurationError(f"input index {input_index} outside 0..{model.n_inputs - 1}")
    if not 0 <= output_index < model.n_outputs:
        raise ConfigurationError(f"output index {output_index} outside 0..{model.n_outputs - 1}")

    feedthrough = float(model.d[output_index, input_index])
    states = structural_states(model, input_index, output_index)
    if not states:
        return RationalTF(np.array([feedthrough]), np.array([1.0]))

    reduced = model.subsystem(states, [input_index], [output_index])
    poles = structural_poles(reduced.a)
    den = np.real(np.poly(poles))
    degree = len(poles) if feedthrough != 0.0 else len(poles) - 1

    scale = max(1.0, float(np.max(np.abs(poles))))
    n_nodes = 2 * (degree + 1)
    nodes = np.cos((2 * np.arange(n_nodes) + 1) * np.pi / (2 * n_nodes))
    s = 1j * scale * nodes
    response = reduced.evaluate(s)[:, 0, 0] * np.polyval(den, s)

    vander = np.vander(s / scale, degree + 1)
    system = np.vstack([vander.real, vander.imag])
    rhs = np.concatenate([response.real, response.imag])
    condition = float(np.linalg.cond(system))
    if condition > CONDITION_LIMIT:
        raise TransferFunctionError(
            f"numerator fit is ill-conditioned (cond={condition:.3e})", condition
        )
    theta, *_ = np.linalg.lstsq(system, rhs, rcond=None)

    cutoff = 1e-10 * np.max(np.abs(theta)) if theta.size else 0.0
    first = 0
    while first < theta.size - 1 and abs(theta[first]) <= cutoff:
        first += 1
    theta = theta[first:]
    powers = np.arange(theta.size - 1, -1, -1)
    num = theta / scale**powers

    logger.debug(
        "transfer_function_converted",
        input=model.input_names[input_index],
        output=model.output_names[output_index],
        order=len(poles),
        condition=condition,
    )
    return RationalTF(num, den)


def eigenvalues(model: LtiModel) -> np.ndarray:
    """Eigenvalues of A sorted by real part, largest first."""
    try:
        values = np.linalg.eigvals(model.a)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"eigenvalue computation did not converge: {e}") from e
    return values[np.argsort(-values.real, kind="stable")]


def spectral_abscissa(model: LtiModel) -> float:
    return float(np.max(eigenvalues(model).real)) if model.n_states else float("-inf")
