import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from formflight.control import StateFeedbackGain, loop_transfer, preset_gains
from formflight.errors import DomainError
from formflight.freqana import (
    FrequencyGrid,
    bode_S_integral,
    bode_T_integral,
    channel_magnitudes,
    complementary_sensitivity,
    growth_sweep,
    rhp_zeros,
    sensitivity_response,
    steady_state_ramp_error,
    string_stable,
    sv_sweep,
    system_type,
    velocity_error_constant,
)
from formflight.linmodel import AILERON, RUDDER, LtiModel, RationalTF, transfer_function


def _pd(kp: float, kd: float) -> StateFeedbackGain:
    return StateFeedbackGain(k=np.hstack([kp * np.eye(3), kd * np.eye(3)]))


def _damping_for_peak(peak: float) -> float:
    """Damping d of 1/(s^2 + d s + 1) whose resonant peak equals `peak`."""
    return math.sqrt(2.0 - 2.0 * math.sqrt(1.0 - 1.0 / peak**2))


class TestFrequencyGrid:
    def test_log_spacing(self):
        omega = FrequencyGrid(0.01, 100.0, 5).omega
        assert omega == pytest.approx([0.01, 0.1, 1.0, 10.0, 100.0])

    @pytest.mark.parametrize("start,stop,n", [(0.0, 1.0, 10), (10.0, 1.0, 10), (0.1, 1.0, 1)])
    def test_invalid(self, start, stop, n):
        with pytest.raises(DomainError):
            FrequencyGrid(start, stop, n)


class TestSensitivities:
    def test_sum_is_identity_point_mass(self, point_mass):
        gain = _pd(1.0, 0.5)
        omega = np.logspace(-2, 2, 30)

        t = complementary_sensitivity(point_mass, gain).frequency_response(omega)
        s = sensitivity_response(point_mass, gain, omega)

        assert np.max(np.abs(s + t - np.eye(3))) < 1e-9

    @pytest.mark.parametrize("preset", ["lqr", "lqr_integral", "structured"])
    def test_sum_is_identity_presets(self, model, preset):
        gain = preset_gains(preset)
        omega = np.logspace(-2, 1, 20)

        t = complementary_sensitivity(model, gain).frequency_response(omega)
        s = sensitivity_response(model, gain, omega)

        assert np.max(np.abs(s + t - np.eye(3))) < 1e-6

    @pytest.mark.xfail(
        reason="tabulated lateral loop has s^5 coefficient 4.199; the tabulated LQR gain "
        "closes it at -trace(A - BK) = 6.561 and a leading numerator of 0.0483, not 0.02055",
        strict=False,
    )
    def test_lateral_channel_matches_tabulated(self, model, lqr_gain):
        tabulated = RationalTF(
            [0.02055, 0.6886, 1.203, 0.8138, 0.4735],
            [1.0, 4.199, 11.61, 14.65, 10.13, 4.519, 0.4735],
        )
        omega = np.array([0.1, 0.3, 1.0, 3.0])

        t_yy = complementary_sensitivity(model, lqr_gain).frequency_response(omega)[:, 1, 1]

        assert np.abs(t_yy) == pytest.approx(np.abs(tabulated(1j * omega)), rel=0.05)


class TestSvSweep:
    def test_static_gain(self):
        static = LtiModel(a=np.zeros((0, 0)), b=np.zeros((0, 2)), c=np.zeros((2, 0)), d=np.diag([2.0, 1.0]))
        sweep = sv_sweep(static, FrequencyGrid(0.1, 10.0, 7))

        assert np.allclose(sweep.sigma_max, 2.0)
        assert sweep.peak == pytest.approx(2.0)

    def test_first_order_lag(self):
        lag = LtiModel(a=[[-1.0]], b=[[1.0]])
        sweep = sv_sweep(lag, FrequencyGrid(0.01, 100.0, 5))

        assert sweep.sigma_max[2] == pytest.approx(1.0 / math.sqrt(2.0))
        assert sweep.peak_frequency == pytest.approx(0.01)

    def test_refines_resonant_peak(self):
        zeta = 0.1
        oscillator = LtiModel(a=[[0.0, 1.0], [-1.0, -2.0 * zeta]], b=[[0.0], [1.0]], c=[[1.0, 0.0]])

        sweep = sv_sweep(oscillator, FrequencyGrid(0.01, 100.0, 40))

        assert sweep.peak == pytest.approx(1.0 / (2 * zeta * math.sqrt(1 - zeta**2)), rel=1e-6)
        assert sweep.peak_frequency == pytest.approx(math.sqrt(1 - 2 * zeta**2), rel=1e-4)
        assert sweep.peak >= sweep.sigma_max.max()

    def test_growth_ignores_shear(self):
        shear = LtiModel(a=np.zeros((0, 0)), b=np.zeros((0, 2)), c=np.zeros((2, 0)), d=[[1.0, 3.0], [0.0, 1.0]])
        grid = FrequencyGrid(0.1, 10.0, 7)

        assert sv_sweep(shear, grid).peak == pytest.approx((3.0 + math.sqrt(13.0)) / 2.0)
        assert growth_sweep(shear, grid).peak == pytest.approx(1.0)

    def test_growth_matches_sigma_on_scalar_resonance(self):
        zeta = 0.1
        oscillator = LtiModel(a=[[0.0, 1.0], [-1.0, -2.0 * zeta]], b=[[0.0], [1.0]], c=[[1.0, 0.0]])
        grid = FrequencyGrid(0.01, 100.0, 40)

        assert growth_sweep(oscillator, grid).peak == pytest.approx(sv_sweep(oscillator, grid).peak, rel=1e-9)

    def test_channel_magnitudes(self, point_mass):
        t = complementary_sensitivity(point_mass, _pd(1.0, 2.0))
        mags = channel_magnitudes(t, np.array([1.0, 2.0]))

        assert mags.shape == (2, 3)
        assert mags[0] == pytest.approx([0.5, 0.5, 0.5])


class TestStringStable:
    def test_well_damped(self, point_mass):
        report = string_stable(point_mass, _pd(1.0, 2.0), label="pd")

        assert report.verdict == "stable"
        assert report.is_string_stable
        assert report.closed_loop_stable
        assert report.peak_sigma <= 1.0 + 1e-9
        assert len(report.omega_radps) == 400

    def test_resonant(self, point_mass):
        report = string_stable(point_mass, _pd(1.0, 0.2))

        assert report.verdict == "unstable"
        assert report.closed_loop_stable
        assert report.peak_sigma == pytest.approx(1.0 / (0.2 * math.sqrt(1 - 0.01)), rel=1e-6)

    def test_small_resonance_grows_down_the_string(self, point_mass):
        report = string_stable(point_mass, _pd(1.0, _damping_for_peak(1.0005)))

        assert report.peak_sigma == pytest.approx(1.0005, rel=1e-7)
        assert report.peak_growth == pytest.approx(1.0005, rel=1e-7)
        assert report.verdict == "unstable"

    def test_cross_coupling_is_marginal(self, point_mass):
        kp = np.eye(3)
        kp[0, 1] = 1.0
        report = string_stable(point_mass, StateFeedbackGain(k=np.hstack([kp, 2.0 * np.eye(3)])))

        assert report.peak_growth <= 1.0 + 1e-6
        assert report.peak_sigma > 1.0 + 1e-3
        assert report.verdict == "marginal"
        assert report.is_string_stable

    def test_headway_restores_string_stability(self, point_mass):
        report = string_stable(point_mass, _pd(1.0, 0.2), headway=2.0)

        assert report.verdict == "stable"
        assert report.headway_s == 2.0

    def test_unstable_loop(self, point_mass):
        report = string_stable(point_mass, _pd(-1.0, -2.0))

        assert not report.closed_loop_stable
        assert report.verdict == "unstable"
        assert report.spectral_abscissa > 0

    def test_lqr_preset(self, model, lqr_gain):
        report = string_stable(model, lqr_gain, label="lqr")

        assert report.closed_loop_stable
        assert report.is_string_stable
        assert report.peak_growth <= 1.0 + 1e-6
        assert max(report.channel_peaks) <= 1.0 + 1e-6
        # x-z coupling through thrust and elevator lifts the directional bound
        assert report.peak_sigma == pytest.approx(1.0323, abs=5e-4)
        assert report.peak_frequency_radps == pytest.approx(0.115, rel=0.05)

    def test_structured_preset(self, model, structured_gains):
        report = string_stable(model, structured_gains, label="structured")

        assert report.verdict == "stable"
        assert report.closed_loop_stable
        assert report.peak_growth <= 1.0 + 1e-6
        assert report.peak_sigma == pytest.approx(1.0000211, abs=5e-6)

    def test_integral_lqr_preset_amplifies(self, model, lqr_int_gain):
        report = string_stable(model, lqr_int_gain, label="lqr_integral")
        t = complementary_sensitivity(model, lqr_int_gain)
        mags = channel_magnitudes(t, np.logspace(math.log10(0.03), math.log10(0.3), 60))

        assert report.verdict == "unstable"
        assert report.closed_loop_stable
        assert report.peak_growth == pytest.approx(2.193, rel=0.01)
        assert report.growth_frequency_radps == pytest.approx(0.264, rel=0.05)
        assert np.max(mags) > 1.0


class TestSystemType:
    @pytest.mark.parametrize(
        "num,den,expected",
        [
            ([1.0], [1.0, 1.0], 0),
            ([1.0], [1.0, 0.0], 1),
            ([1.0], [1.0, 0.0, 0.0], 2),
            ([1.0, 0.0], [1.0, 1.0, 0.0, 0.0], 1),
        ],
    )
    def test_ladder(self, num, den, expected):
        assert system_type(RationalTF(num, den)) == expected

    def test_near_origin_pole_not_counted(self):
        # tabulated lateral denominator: an exact integrator plus a pole near 2e-7 rad/s
        tf = RationalTF([1.0], [1.0, 0.5657, 2.962, 1.275, 0.002584, 5.131e-10, 0.0])
        assert system_type(tf) == 1

    def test_aileron_channel(self, model):
        assert system_type(transfer_function(model, AILERON, 1)) == 1

    def test_integral_lqr_lateral_loop(self, model, lqr_int_gain):
        loop = loop_transfer(model, lqr_int_gain)
        assert system_type(transfer_function(loop, 1, 1)) == 2

    @given(k=st.floats(min_value=1e-3, max_value=1e3) | st.floats(min_value=-1e3, max_value=-1e-3))
    def test_invariant_under_scaling(self, k):
        tf = RationalTF([1.0, 3.0], [1.0, 2.0, 0.0, 0.0])
        scaled = tf.scale(k)

        assert system_type(scaled) == system_type(tf) == 2
        assert scaled.relative_degree == tf.relative_degree


class TestErrorConstants:
    def test_velocity_constant(self):
        assert velocity_error_constant(RationalTF([2.0], [1.0, 1.0, 0.0])) == pytest.approx(2.0)
        assert velocity_error_constant(RationalTF([1.0, 3.0], [1.0, 2.0, 0.0])) == pytest.approx(1.5)

    def test_velocity_constant_limits(self):
        assert velocity_error_constant(RationalTF([1.0], [1.0, 1.0])) == 0.0
        assert velocity_error_constant(RationalTF([1.0], [1.0, 0.0, 0.0])) == math.inf

    def test_rhp_zeros(self):
        assert rhp_zeros(RationalTF([1.0, -2.0], [1.0, 1.0, 1.0])) == pytest.approx([2.0])
        assert rhp_zeros(RationalTF([1.0, 2.0], [1.0, 1.0, 1.0])).size == 0

    def test_rudder_channel_nonminimum_phase(self, model):
        zeros = rhp_zeros(transfer_function(model, RUDDER, 1))
        assert np.any(np.abs(zeros.imag) < 1e-9)

    def test_ramp_error(self):
        assert steady_state_ramp_error(RationalTF([2.0], [1.0, 1.0, 0.0])) == pytest.approx(0.5)
        assert steady_state_ramp_error(RationalTF([1.0, 1.0], [1.0, 0.0, 0.0])) == 0.0
        assert steady_state_ramp_error(RationalTF([1.0], [1.0, 1.0])) == math.inf

    def test_ramp_error_unstable_loop(self):
        with pytest.raises(DomainError, match="not stable"):
            steady_state_ramp_error(RationalTF([-2.0], [1.0, 1.0, 0.0]))


class TestBodeIntegrals:
    def test_complementary_type_one(self):
        loop = RationalTF([1.0], [1.0, 1.0, 0.0])
        result = bode_T_integral(loop.feedback(), loop)

        assert result.finite
        assert result.rhs == pytest.approx(-math.pi / 2)
        assert result.lhs == pytest.approx(result.rhs, abs=1e-6)

    def test_complementary_type_two(self):
        loop = RationalTF([2.0, 1.0], [1.0, 0.0, 0.0])
        result = bode_T_integral(loop.feedback(), loop)

        assert result.rhs == 0.0
        assert result.lhs == pytest.approx(0.0, abs=1e-6)

    def test_complementary_with_rhp_zero(self):
        loop = RationalTF([-1.0, 1.0], [1.0, 2.0, 0.0])
        result = bode_T_integral(loop.feedback(), loop)

        # -pi / (2 Kv) with Kv = 1/2, plus pi / z with z = 1
        assert result.rhs == pytest.approx(0.0, abs=1e-12)
        assert result.lhs == pytest.approx(0.0, abs=1e-6)

    def test_complementary_type_zero_diverges(self):
        loop = RationalTF([1.0], [1.0, 1.0])
        result = bode_T_integral(loop.feedback(), loop)

        assert not result.finite
        assert math.isnan(result.lhs)

    def test_sensitivity_stable_open_loop(self):
        s = RationalTF([5.0], [1.0, 3.0, 3.0, 1.0]).sensitivity()
        assert bode_S_integral(s) == pytest.approx(0.0, abs=1e-6)

    def test_sensitivity_with_integrator(self):
        s = RationalTF([1.0], [1.0, 2.0, 1.0, 0.0]).sensitivity()
        assert bode_S_integral(s) == pytest.approx(0.0, abs=1e-6)

    def test_sensitivity_unity(self):
        assert bode_S_integral(RationalTF([1.0], [1.0])) == 0.0

    def test_sensitivity_relative_degree_one(self):
        with pytest.raises(DomainError, match="relative degree"):
            bode_S_integral(RationalTF([1.0], [1.0, 1.0]).sensitivity())

    def test_not_a_sensitivity(self):
        with pytest.raises(DomainError, match="not a sensitivity"):
            bode_S_integral(RationalTF([2.0, 1.0], [1.0, 3.0]))

    def test_unstable_open_loop(self):
        open_loop = RationalTF([5.0], np.polymul([1.0, -0.1], [1.0, 2.0, 1.0]))
        with pytest.raises(DomainError, match="right half-plane"):
            bode_S_integral(open_loop.sensitivity())
