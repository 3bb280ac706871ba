"""Controller construction: LQR synthesis, integral augmentation, the structured
PI/velocity-feedback law, time headway, presets and closed-loop assembly."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Union

import numpy as np
import orjson
import structlog
from scipy import linalg

from formflight.errors import ConfigurationError, DomainError, SynthesisError
from formflight.linmodel import (
    ATTITUDE_INDEX,
    POSITION_NAMES,
    LtiModel,
    selector,
)

logger = structlog.get_logger()

SYMMETRY_TOL = 1e-12
RESIDUAL_TOL = 1e-8


class GainFlavor(str, Enum):
    PLAIN = "plain"
    INTEGRAL = "integral"


@dataclass(frozen=True, eq=False)
class LqrWeights:
    q: np.ndarray
    r: np.ndarray

    def __post_init__(self) -> None:
        q = np.atleast_2d(np.asarray(self.q, dtype=float))
        r = np.atleast_2d(np.asarray(self.r, dtype=float))
        for name, mat in (("Q", q), ("R", r)):
            if mat.shape[0] != mat.shape[1]:
                raise ConfigurationError(f"{name} must be square, got shape {mat.shape}")
            scale = max(1.0, float(np.max(np.abs(mat))))
            if np.max(np.abs(mat - mat.T)) > SYMMETRY_TOL * scale:
                raise ConfigurationError(f"{name} is not symmetric")
        if np.min(np.linalg.eigvalsh(q)) < -SYMMETRY_TOL * max(1.0, float(np.max(np.abs(q)))):
            raise ConfigurationError("Q must be positive semidefinite")
        try:
            np.linalg.cholesky(r)
        except np.linalg.LinAlgError as e:
            raise ConfigurationError("R must be positive definite") from e
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)


def bryson_weights(
    model: LtiModel,
    position_m: float = 1.0,
    velocity_mps: float = 1.0,
    angle_rad: float = 0.1,
    rate_radps: float = 0.1,
    integral_ms: float = 1.0,
    thrust_n: float = 1e4,
    surface_rad: float = 0.1,
) -> LqrWeights:
    """Diagonal weights 1/max^2 from acceptable deviations of each channel."""
    maxima = [position_m] * 3 + [velocity_mps] * 3 + [angle_rad] * 3 + [rate_radps] * 3
    extra = model.n_states - len(maxima)
    if extra not in (0, 3):
        raise ConfigurationError(
            f"default weights cover the 12-state aircraft and its integral augmentation, "
            f"got {model.n_states} states"
        )
    maxima += [integral_ms] * extra
    q = np.diag(1.0 / np.square(maxima))
    r = np.diag(1.0 / np.square([thrust_n, surface_rad, surface_rad, surface_rad]))
    return LqrWeights(q=q, r=r)


@dataclass(frozen=True, eq=False)
class StateFeedbackGain:
    """u = -K x (plain) or u = -K [x; int(p - p_ref)] (integral)."""

    k: np.ndarray
    flavor: GainFlavor = GainFlavor.PLAIN
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        k = np.atleast_2d(np.asarray(self.k, dtype=float))
        if not np.all(np.isfinite(k)):
            raise ConfigurationError("gain matrix contains non-finite entries")
        k.setflags(write=False)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "flavor", GainFlavor(self.flavor))


@dataclass(frozen=True, eq=False)
class GainSet:
    """Gains of the structured law
    u = Kv Kp int(e) + Kv Kd e - Kv int(v) - Kxv v - K_alpha alpha_bar."""

    k_alpha: np.ndarray
    k_v: np.ndarray
    k_p: np.ndarray
    k_d: np.ndarray
    k_xv: np.ndarray
    metadata: dict[str, Any] = field(default_factory=dict)

    _SHAPES = {
        "k_alpha": (4, 6),
        "k_v": (4, 3),
        "k_p": (3, 3),
        "k_d": (3, 3),
        "k_xv": (4, 3),
    }

    def __post_init__(self) -> None:
        for name, shape in self._SHAPES.items():
            mat = np.array(getattr(self, name), dtype=float)
            if mat.shape != shape:
                raise ConfigurationError(f"{name} must be {shape}, got {mat.shape}")
            if not np.all(np.isfinite(mat)):
                raise ConfigurationError(f"{name} contains non-finite entries")
            mat.setflags(write=False)
            object.__setattr__(self, name, mat)

    @property
    def is_diagonal(self) -> bool:
        return all(
            np.array_equal(m, np.diag(np.diag(m))) for m in (self.k_p, self.k_d)
        )

    def with_diagonals(self, k_p: np.ndarray, k_d: np.ndarray) -> GainSet:
        return GainSet(
            k_alpha=self.k_alpha,
            k_v=self.k_v,
            k_p=np.diag(k_p),
            k_d=np.diag(k_d),
            k_xv=self.k_xv,
            metadata=dict(self.metadata),
        )


Controller = Union[StateFeedbackGain, GainSet]


@dataclass
class ControllerState:
    """Integrator memory of one aircraft's structured controller."""

    error_integral: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity_integral: np.ndarray = field(default_factory=lambda: np.zeros(3))


def lqr_synthesize(model: LtiModel, weights: LqrWeights) -> StateFeedbackGain:
    a, b = model.a, model.b
    n, m = b.shape
    if weights.q.shape != (n, n) or weights.r.shape != (m, m):
        raise ConfigurationError(
            f"weights must be Q {n}x{n} and R {m}x{m}, got {weights.q.shape} and "
            f"{weights.r.shape}"
        )
    try:
        p = linalg.solve_continuous_are(a, b, weights.q, weights.r)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SynthesisError(
            "Riccati solve failed; check stabilizability of (A, B)",
            diagnostics={"reason": str(e)},
        ) from e

    k = linalg.solve(weights.r, b.T @ p, assume_a="pos")
    residual = a.T @ p + p @ a - p @ b @ k + weights.q
    residual_norm = float(np.linalg.norm(residual, "fro"))
    p_norm = float(np.linalg.norm(p, "fro"))
    abscissa = float(np.max(np.linalg.eigvals(a - b @ k).real))
    diagnostics = {
        "residual_norm": residual_norm,
        "riccati_norm": p_norm,
        "spectral_abscissa": abscissa,
    }
    if not np.isfinite(residual_norm) or residual_norm > RESIDUAL_TOL * max(
        p_norm, np.finfo(float).tiny
    ):
        raise SynthesisError("Riccati residual check failed", diagnostics=diagnostics)
    if abscissa >= 0:
        raise SynthesisError("LQR closed loop is not stable", diagnostics=diagnostics)

    flavor = GainFlavor.INTEGRAL if model.metadata.get("integral_augmented") else GainFlavor.PLAIN
    logger.info("lqr_synthesized", flavor=flavor.value, **diagnostics)
    return StateFeedbackGain(k=k, flavor=flavor, metadata={"riccati": p, **diagnostics})


def _require_selectors(model: LtiModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if model.position_selector is None or model.velocity_selector is None:
        raise ConfigurationError("model needs position and velocity selectors")
    attitude = model.attitude_selector
    if attitude is None:
        attitude = selector(ATTITUDE_INDEX, model.n_states)
    return model.position_selector, model.velocity_selector, attitude


def augment_integral(model: LtiModel) -> LtiModel:
    """Append three states integrating the position deviation from the reference."""
    c_p, c_v, c_alpha = _require_selectors(model)
    n, m = model.n_states, model.n_inputs
    a = np.zeros((n + 3, n + 3))
    a[:n, :n] = model.a
    a[n:, :n] = c_p
    b = np.vstack([model.b, np.zeros((3, m))])
    pad = np.zeros((3, 3))
    return LtiModel(
        a=a,
        b=b,
        state_names=(*model.state_names, "int_x", "int_y", "int_z"),
        input_names=model.input_names,
        output_names=(*model.state_names, "int_x", "int_y", "int_z"),
        position_selector=np.hstack([c_p, pad]),
        velocity_selector=np.hstack([c_v, pad]),
        attitude_selector=np.hstack([c_alpha, np.zeros((c_alpha.shape[0], 3))]),
        metadata={"integral_augmented": True},
    )


_K_X = (
    (2.23e4, -3.48e-8, -916.0, 5.93e4, 1.05e-8, -177.0, 8.25e-7, 5.54e4, 3.98e-6, 3.54e-7, 1.19e4, 3.05e-7),
    (0.0, 7.75e-3, 0.0, 0.0, 4.25e-2, -3.91e-10, 0.751, 9.24e-8, 6.65, 0.828, 3.17e-9, -0.740),
    (9.16e-4, 0.0, 4.45e-3, -7.74e-4, 0.0, 1.98e-2, 0.0, -4.70, 0.0, 0.0, -0.167, 0.0),
    (0.0, 9.70e-3, -3.45e-10, 0.0, 6.63e-2, -1.07e-9, 0.192, 2.52e-7, 1.10, 2.52e-3, 7.24e-9, -4.96),
)  # fmt: skip

_K_X_INTEGRAL = (
    (3.04e4, -6.24e-7, -3.27e3, 6.97e4, 3.27e-8, -3.83e3, 2.02e-6, 9.07e5, 8.93e-6, 1.49e-7, 2.59e4, 9.15e-7, 3.14e3, -1.23e-7, -413.0),
    (0.0, 3.46e-2, 5.65e-10, 0.0, 5.07e-2, 1.08e-9, 0.770, -2.53e-7, 6.77, 0.834, -4.71e-9, -1.04, 0.0, 1.05e-2, 0.0),
    (2.50e-3, 0.0, 1.65e-2, -1.16e-3, 0.0, 4.44e-2, 0.0, -10.4, 0.0, 0.0, -0.283, 0.0, 1.85e-4, 0.0, 1.40e-3),
    (0.0, 7.71e-2, -2.71e-10, 0.0, 8.63e-2, -5.19e-10, 0.231, 1.21e-7, 1.32, 1.13e-2, 2.28e-9, -5.70, 0.0, 3.14e-2, 0.0),
)  # fmt: skip

# leading column repeats the zdot column of K_xv; the remaining six act on alpha_bar
_K_ALPHA_SEVEN_COLUMN = (
    (-2.302e5, 9.372e-5, 5.411e7, 0.0007509, 4.229e-5, 9.616e5, -0.0007284),
    (-9.863e-9, 0.5396, 2.309e-6, 4.472, 0.6881, 3.655e-8, 0.2467),
    (0.09398, 0.0, -22.63, -3.302e-10, 0.0, -0.7453, 2.694e-10),
    (-5.394e-8, 0.1307, 1.262e-5, 1.076, -0.01545, 1.878e-7, -3.75),
)

_K_V = (
    (84677.0, -6.893e-5, -1.239e5),
    (-6.159e-10, 0.009398, -5.512e-9),
    (0.005323, 0.0, 0.0291),
    (-3.348e-9, 0.03092, -3.105e-8),
)

_K_XV = (
    (1.318e5, 1.606e-5, -2.302e5),
    (1.067e-10, 0.01954, -9.863e-9),
    (-0.001378, 0.0, 0.09398),
    (5.834e-10, 0.03872, -5.394e-8),
)

_K_P_DIAG = (0.2421, 0.1559, 0.07919)
_K_D_DIAG = (0.1006, 0.01063, 0.1746)

PRESET_NAMES = ("lqr", "lqr_integral", "structured")


def preset_gains(which: str) -> Controller:
    key = which.replace("-", "_")
    if key in ("lqr_int",):
        key = "lqr_integral"
    if key == "lqr":
        return StateFeedbackGain(k=np.array(_K_X), flavor=GainFlavor.PLAIN, metadata={"preset": key})
    if key == "lqr_integral":
        return StateFeedbackGain(
            k=np.array(_K_X_INTEGRAL), flavor=GainFlavor.INTEGRAL, metadata={"preset": key}
        )
    if key == "structured":
        table = np.array(_K_ALPHA_SEVEN_COLUMN)
        return GainSet(
            k_alpha=table[:, 1:],
            k_v=np.array(_K_V),
            k_p=np.diag(_K_P_DIAG),
            k_d=np.diag(_K_D_DIAG),
            k_xv=np.array(_K_XV),
            metadata={"preset": key, "k_alpha_extra_column": table[:, 0].tolist()},
        )
    raise ConfigurationError(f"unknown preset {which!r}; expected one of {PRESET_NAMES}")


def structured_gain_matrix(gains: GainSet) -> np.ndarray:
    """K_big acting on [int(e); e; int(v); v; alpha_bar]."""
    return np.hstack(
        [gains.k_v @ gains.k_p, gains.k_v @ gains.k_d, -gains.k_v, -gains.k_xv, -gains.k_alpha]
    )


def structured_control(
    gains: GainSet,
    e: Any,
    v: Any,
    alpha_bar: Any,
    cstate: ControllerState,
) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    v = np.asarray(v, dtype=float)
    alpha_bar = np.asarray(alpha_bar, dtype=float)
    return (
        gains.k_v @ gains.k_p @ cstate.error_integral
        + gains.k_v @ gains.k_d @ e
        - gains.k_v @ cstate.velocity_integral
        - gains.k_xv @ v
        - gains.k_alpha @ alpha_bar
    )


def apply_time_headway(delta_ref: Any, headway: float, velocity: Any) -> np.ndarray:
    if headway < 0:
        raise DomainError(f"time headway must be non-negative, got {headway}")
    return np.asarray(delta_ref, dtype=float) + headway * np.asarray(velocity, dtype=float)


@dataclass(frozen=True, eq=False)
class ControllerRealization:
    """Controller as a linear system driven by the aircraft state x and the raw
    position error eps = p_leader - p_own (headway is folded in):

        xi' = a xi + f x + g eps
        u   = h xi + k_x x + k_e eps
    """

    a: np.ndarray
    f: np.ndarray
    g: np.ndarray
    h: np.ndarray
    k_x: np.ndarray
    k_e: np.ndarray
    state_names: tuple[str, ...]

    @property
    def n_states(self) -> int:
        return self.a.shape[0]


def realize(model: LtiModel, controller: Controller, headway: float = 0.0) -> ControllerRealization:
    if headway < 0:
        raise DomainError(f"time headway must be non-negative, got {headway}")
    c_p, c_v, c_alpha = _require_selectors(model)
    n, m = model.n_states, model.n_inputs

    if isinstance(controller, GainSet):
        if m != controller.k_v.shape[0] or c_alpha.shape[0] != controller.k_alpha.shape[1]:
            raise ConfigurationError(
                f"structured gains expect {controller.k_v.shape[0]} inputs and "
                f"{controller.k_alpha.shape[1]} attitude channels, model has {m} and "
                f"{c_alpha.shape[0]}"
            )
        kvkd = controller.k_v @ controller.k_d
        # both integrators reach u only through eta = K_p int(e) - int(v)
        return ControllerRealization(
            a=np.zeros((3, 3)),
            f=-headway * controller.k_p @ c_v - c_v,
            g=controller.k_p.copy(),
            h=controller.k_v.copy(),
            k_x=-headway * kvkd @ c_v - controller.k_xv @ c_v - controller.k_alpha @ c_alpha,
            k_e=kvkd,
            state_names=("eta_x", "eta_y", "eta_z"),
        )

    k = controller.k
    if controller.flavor is GainFlavor.PLAIN:
        if k.shape != (m, n):
            raise ConfigurationError(f"plain gain must be {m}x{n}, got {k.shape}")
        k_state, k_int = k, None
    else:
        if k.shape != (m, n + 3):
            raise ConfigurationError(f"integral gain must be {m}x{n + 3}, got {k.shape}")
        k_state, k_int = k[:, :n], k[:, n:]

    # controller sees positions relative to the reference: p - p_ref = -eps + h v
    relative = np.eye(n) - c_p.T @ c_p + headway * c_p.T @ c_v
    k_x = -k_state @ relative
    k_e = k_state @ c_p.T
    if k_int is None:
        return ControllerRealization(
            a=np.zeros((0, 0)),
            f=np.zeros((0, n)),
            g=np.zeros((0, 3)),
            h=np.zeros((m, 0)),
            k_x=k_x,
            k_e=k_e,
            state_names=(),
        )
    return ControllerRealization(
        a=np.zeros((3, 3)),
        f=headway * c_v,
        g=-np.eye(3),
        h=-k_int,
        k_x=k_x,
        k_e=k_e,
        state_names=("int_x", "int_y", "int_z"),
    )


def _assemble(
    model: LtiModel, ctrl: ControllerRealization, close_position_loop: bool, input_names: tuple
) -> LtiModel:
    c_p = model.position_selector
    n, k = model.n_states, ctrl.n_states
    a_xx = model.a + model.b @ ctrl.k_x
    a_cx = ctrl.f
    if close_position_loop:
        a_xx = a_xx - model.b @ ctrl.k_e @ c_p
        a_cx = a_cx - ctrl.g @ c_p
    a = np.block([[a_xx, model.b @ ctrl.h], [a_cx, ctrl.a]]) if k else a_xx
    b = np.vstack([model.b @ ctrl.k_e, ctrl.g]) if k else model.b @ ctrl.k_e
    c = np.hstack([c_p, np.zeros((3, k))])
    pad = np.zeros((3, k))
    return LtiModel(
        a=a,
        b=b,
        c=c,
        state_names=(*model.state_names, *ctrl.state_names),
        input_names=input_names,
        output_names=POSITION_NAMES,
        position_selector=c,
        velocity_selector=np.hstack([model.velocity_selector, pad]),
    )


def closed_loop(model: LtiModel, controller: Controller, headway: float = 0.0) -> LtiModel:
    """Follower loop from the leader's position deviation to its own."""
    ctrl = realize(model, controller, headway)
    return _assemble(model, ctrl, True, ("x_leader", "y_leader", "z_leader"))


def loop_transfer(model: LtiModel, controller: Controller, headway: float = 0.0) -> LtiModel:
    """Open loop from position error to own position, inner loops closed."""
    ctrl = realize(model, controller, headway)
    return _assemble(model, ctrl, False, ("e_x", "e_y", "e_z"))


def controller_to_dict(controller: Controller) -> dict[str, Any]:
    if isinstance(controller, GainSet):
        return {
            "kind": "structured",
            "K_alpha": controller.k_alpha.tolist(),
            "K_v": controller.k_v.tolist(),
            "K_p": controller.k_p.tolist(),
            "K_d": controller.k_d.tolist(),
            "K_xv": controller.k_xv.tolist(),
        }
    return {"kind": "state_feedback", "flavor": controller.flavor.value, "K": controller.k.tolist()}


def controller_from_dict(doc: dict[str, Any]) -> Controller:
    try:
        kind = doc["kind"]
        if kind == "structured":
            return GainSet(
                k_alpha=doc["K_alpha"],
                k_v=doc["K_v"],
                k_p=doc["K_p"],
                k_d=doc["K_d"],
                k_xv=doc["K_xv"],
            )
        if kind == "state_feedback":
            return StateFeedbackGain(k=doc["K"], flavor=GainFlavor(doc.get("flavor", "plain")))
    except KeyError as e:
        raise ConfigurationError(f"gains document is missing {e.args[0]!r}") from e
    except ValueError as e:
        raise ConfigurationError(f"gains document is invalid: {e}") from e
    raise ConfigurationError(f"unknown gains kind {kind!r}")


def save_controller(controller: Controller, path: Path) -> Path:
    path.write_bytes(orjson.dumps(controller_to_dict(controller), option=orjson.OPT_INDENT_2))
    return path


def load_controller(path: Path) -> Controller:
    try:
        doc = orjson.loads(Path(path).read_bytes())
    except orjson.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: not valid JSON: {e}") from e
    return controller_from_dict(doc)


def resolve_controller(reference: str) -> Controller:
    """Preset name (lqr, lqr-int, structured) or file:<path> to a gains document."""
    if reference.startswith("file:"):
        return load_controller(Path(reference[len("file:") :]))
    return preset_gains(reference)


