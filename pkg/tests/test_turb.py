import numpy as np
import pytest
from scipy import integrate, signal

from formflight.errors import DomainError, OutOfRangeError, ResourceExhaustedError
from formflight.turb import (
    TurbulenceField,
    generate,
    longitudinal_spectrum,
    sample,
    transverse_spectrum,
)

L = 762.0
SIGMA = 0.02 * 230.0


class TestSpectra:
    @pytest.mark.parametrize("spectrum", [longitudinal_spectrum, transverse_spectrum])
    def test_integrates_to_variance(self, spectrum):
        total, _ = integrate.quad(lambda w: float(spectrum(w, SIGMA, L)), 0.0, np.inf, limit=500)
        assert total == pytest.approx(SIGMA**2, rel=1e-4)

    def test_low_frequency_levels(self):
        assert longitudinal_spectrum(0.0, SIGMA, L) == pytest.approx(SIGMA**2 * 2 * L / np.pi)
        assert transverse_spectrum(0.0, SIGMA, L) == pytest.approx(SIGMA**2 * L / np.pi)

    def test_vectorized(self):
        omega = np.logspace(-5, 0, 7)
        assert longitudinal_spectrum(omega, SIGMA, L).shape == (7,)
        assert np.all(np.diff(longitudinal_spectrum(omega, SIGMA, L)) < 0)


class TestGenerate:
    def test_zero_intensity_is_calm(self):
        field = generate(5000.0, intensity=0.0, seed=3)

        assert field.sigma == 0.0
        assert np.all(field.samples == 0.0)

    def test_grid(self):
        field = generate(100.0, dx=10.0, x_start=-50.0)

        assert field.n_samples == 11
        assert field.x_end == pytest.approx(50.0)
        assert field.grid[0] == -50.0

    def test_deterministic(self):
        first = generate(20000.0, intensity=0.02, seed=5)
        second = generate(20000.0, intensity=0.02, seed=5)
        other = generate(20000.0, intensity=0.02, seed=6)

        assert np.array_equal(first.samples, second.samples)
        assert not np.array_equal(first.samples, other.samples)

    def test_samples_read_only(self):
        field = generate(1000.0, intensity=0.02)
        with pytest.raises(ValueError):
            field.samples[0, 0] = 1.0

    def test_variance_per_component(self):
        field = generate(20000 * L, length_scale=L, intensity=0.02, dx=10.0, seed=1)
        variance = field.samples.var(axis=0)

        assert variance == pytest.approx([SIGMA**2] * 3, rel=0.1)

    def test_vertical_periodogram_matches_spectrum(self):
        dx = 2.3
        field = generate(2.0e6, length_scale=L, intensity=0.02, dx=dx, seed=2)

        omega, psd = signal.welch(field.samples[:, 2], fs=2 * np.pi / dx, nperseg=16384)

        band = (omega >= 0.2 / L) & (omega <= 20.0 / L)
        ratio_db = 10.0 * np.log10(psd[band] / transverse_spectrum(omega[band], SIGMA, L))
        assert band.sum() > 50
        assert np.all(np.abs(ratio_db) < 3.0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"extent": 0.0},
            {"extent": 100.0, "dx": 0.0},
            {"extent": 100.0, "length_scale": -1.0},
            {"extent": 100.0, "intensity": -0.1},
        ],
    )
    def test_invalid_arguments(self, kwargs):
        with pytest.raises(DomainError):
            generate(**kwargs)

    def test_sample_cap(self, monkeypatch):
        monkeypatch.setenv("FORMFLIGHT_MAX_TURBULENCE_SAMPLES", "100")

        with pytest.raises(ResourceExhaustedError, match="cap of 100"):
            generate(1000.0, dx=2.3)

    def test_describe(self):
        info = generate(100.0, intensity=0.01, seed=4).describe()

        assert info["sigma_mps"] == pytest.approx(2.3)
        assert info["seed"] == 4
        assert info["n_samples"] == 45

    def test_to_csv(self, tmp_path):
        field = generate(10.0, dx=5.0)
        path = field.to_csv(tmp_path / "turbulence.csv")

        lines = path.read_text().splitlines()
        assert lines[0] == "x,u,v,w"
        assert len(lines) == 4


class TestSample:
    @pytest.fixture
    def field(self):
        samples = np.arange(15, dtype=float).reshape(5, 3)
        return TurbulenceField(
            length_scale=L, intensity=0.0, sigma=0.0, dx=2.0, x_start=10.0, samples=samples, seed=0
        )

    def test_grid_node(self, field):
        assert np.array_equal(sample(field, 12.0), [3.0, 4.0, 5.0])

    def test_midpoint(self, field):
        assert sample(field, 13.0) == pytest.approx([4.5, 5.5, 6.5])

    def test_ends(self, field):
        assert np.array_equal(sample(field, 10.0), [0.0, 1.0, 2.0])
        assert np.array_equal(sample(field, 18.0), [12.0, 13.0, 14.0])

    def test_array_query(self, field):
        values = sample(field, np.array([[10.0, 11.0], [17.0, 18.0]]))
        assert values.shape == (2, 2, 3)

    def test_frozen(self, field):
        assert np.array_equal(sample(field, 14.3), sample(field, 14.3))

    @pytest.mark.parametrize("x", [9.0, 18.5])
    def test_outside_extent(self, field, x):
        with pytest.raises(OutOfRangeError):
            sample(field, x)

    def test_wing_feels_gust_before_tail(self):
        samples = np.zeros((101, 3))
        samples[60, 2] = 1.0
        field = TurbulenceField(
            length_scale=L, intensity=0.0, sigma=0.0, dx=1.0, x_start=0.0, samples=samples, seed=0
        )
        tail_arm = 18.0

        # wing at x = 60 is in the gust, tail is still 18 m behind it
        assert sample(field, 60.0)[2] == 1.0
        assert sample(field, 60.0 - tail_arm)[2] == 0.0
