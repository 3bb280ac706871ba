"""Frozen one-dimensional von Karman turbulence along the flight path."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import structlog

from formflight.config import get_settings
from formflight.errors import DomainError, OutOfRangeError, ResourceExhaustedError

logger = structlog.get_logger()

DEFAULT_LENGTH_SCALE_M = 762.0


def longitudinal_spectrum(omega: Any, sigma: float, length_scale: float) -> np.ndarray:
    """One-sided spatial PSD of u, integrating to sigma^2 over [0, inf)."""
    omega = np.asarray(omega, dtype=float)
    return sigma**2 * (2.0 * length_scale / np.pi) / (
        1.0 + (1.339 * length_scale * omega) ** 2
    ) ** (5.0 / 6.0)


def transverse_spectrum(omega: Any, sigma: float, length_scale: float) -> np.ndarray:
    """One-sided spatial PSD of v and w, integrating to sigma^2 over [0, inf).

    The transverse scale is half the longitudinal one, so 2.678 * (L / 2) = 1.339 L.
    """
    omega = np.asarray(omega, dtype=float)
    transverse_scale = 0.5 * length_scale
    scaled_sq = (2.678 * transverse_scale * omega) ** 2
    return (
        sigma**2
        * (2.0 * transverse_scale / np.pi)
        * (1.0 + (8.0 / 3.0) * scaled_sq)
        / (1.0 + scaled_sq) ** (11.0 / 6.0)
    )


@dataclass(frozen=True, eq=False)
class TurbulenceField:
    """Gust velocities (u, v, w) on a uniform x-grid starting at x_start."""

    length_scale: float
    intensity: float
    sigma: float
    dx: float
    x_start: float
    samples: np.ndarray
    seed: int

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def x_end(self) -> float:
        return self.x_start + (self.n_samples - 1) * self.dx

    @property
    def grid(self) -> np.ndarray:
        return self.x_start + self.dx * np.arange(self.n_samples)

    def sample(self, x: Any) -> np.ndarray:
        """Linear interpolation at x (scalar or array), returning (..., 3)."""
        x = np.asarray(x, dtype=float)
        position = (x - self.x_start) / self.dx
        last = self.n_samples - 1
        # tolerate round-off at the ends of the grid
        if np.any(position < -1e-9) or np.any(position > last + 1e-9):
            raise OutOfRangeError(
                f"turbulence sampled outside [{self.x_start}, {self.x_end}] m"
            )
        position = np.clip(position, 0.0, last)
        index = np.minimum(np.floor(position).astype(np.intp), max(last - 1, 0))
        frac = (position - index)[..., None]
        lower = self.samples[index]
        upper = self.samples[np.minimum(index + 1, last)]
        return lower + frac * (upper - lower)

    def to_csv(self, path: Path) -> Path:
        table = np.column_stack([self.grid, self.samples])
        np.savetxt(path, table, delimiter=",", header="x,u,v,w", comments="", fmt="%.10g")
        return path

    def describe(self) -> dict[str, Any]:
        return {
            "length_scale_m": self.length_scale,
            "intensity_frac": self.intensity,
            "sigma_mps": self.sigma,
            "dx_m": self.dx,
            "x_start_m": self.x_start,
            "n_samples": self.n_samples,
            "seed": self.seed,
        }


def generate(
    extent: float,
    length_scale: float = DEFAULT_LENGTH_SCALE_M,
    intensity: float = 0.0,
    reference_speed: float = 230.0,
    dx: float = 2.3,
    seed: int = 0,
    x_start: float = 0.0,
) -> TurbulenceField:
    """Spectrally shaped white noise, one independent stream per component."""
    if extent <= 0:
        raise DomainError(f"extent must be positive, got {extent}")
    if dx <= 0:
        raise DomainError(f"grid spacing must be positive, got {dx}")
    if length_scale <= 0:
        raise DomainError(f"length scale must be positive, got {length_scale}")
    if intensity < 0:
        raise DomainError(f"intensity must be non-negative, got {intensity}")

    n = math.ceil(extent / dx) + 1
    cap = get_settings().max_turbulence_samples
    if n > cap:
        raise ResourceExhaustedError(
            f"turbulence grid needs {n} samples, above the cap of {cap}"
        )

    sigma = intensity * reference_speed
    samples = np.zeros((n, 3))
    if sigma > 0:
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal((3, n))
        omega = 2.0 * np.pi * np.fft.rfftfreq(n, d=dx)
        spectra = (
            longitudinal_spectrum(omega, sigma, length_scale),
            transverse_spectrum(omega, sigma, length_scale),
            transverse_spectrum(omega, sigma, length_scale),
        )
        for axis, psd in enumerate(spectra):
            shaping = np.sqrt(np.pi * psd / dx)
            shaping[0] = 0.0
            samples[:, axis] = np.fft.irfft(np.fft.rfft(noise[axis]) * shaping, n=n)

    samples.setflags(write=False)
    logger.debug(
        "turbulence_generated",
        n_samples=n,
        sigma_mps=sigma,
        length_scale_m=length_scale,
        seed=seed,
    )
    return TurbulenceField(
        length_scale=length_scale,
        intensity=intensity,
        sigma=sigma,
        dx=dx,
        x_start=x_start,
        samples=samples,
        seed=seed,
    )


def sample(field: TurbulenceField, x: Any) -> np.ndarray:
    return field.sample(x)
