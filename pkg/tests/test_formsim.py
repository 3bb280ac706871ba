import pickle

import numpy as np
import pytest

from formflight.control import StateFeedbackGain
from formflight.errors import ConfigurationError, DomainError, SimulationDivergedError
from formflight.formsim import (
    DelayLine,
    amplification_ratios,
    energy_report,
    run_ensemble,
    run_scenario,
    solo_baseline,
)
from formflight.linmodel import AircraftParams
from formflight.models.scenario import FormationScenario, load_scenario
from formflight.wake import optimal_offset


def _scenario(**overrides) -> FormationScenario:
    fields = {
        "name": "unit",
        "n_aircraft": 3,
        "controller": "structured",
        "wake_enabled": False,
        "duration_s": 2.0,
        "dt_s": 0.01,
        "transient_s": 0.0,
        "energy_window_s": 1.0,
    }
    fields.update(overrides)
    return FormationScenario(**fields)


class TestDelayLine:
    def test_constant_history(self):
        line = DelayLine(delay=0.5, capacity=8, initial=[1.0, 2.0])
        for k in range(1, 20):
            line.push(0.1 * k, [1.0, 2.0])

        assert np.array_equal(line.read(1.5), [1.0, 2.0])

    def test_holds_initial_before_history(self):
        line = DelayLine.for_step(1.0, 0.1, initial=3.0)
        line.push(0.1, 4.0)

        assert line.read(0.5) == 3.0

    def test_exact_delay(self):
        line = DelayLine.for_step(0.05, 0.01, initial=0.0)
        for k in range(1, 9):
            line.push(0.01 * k, float(k))

        assert line.read(0.1) == pytest.approx(5.0)
        assert line.read(0.105) == pytest.approx(5.5)

    def test_holds_newest_past_history(self):
        line = DelayLine.for_step(0.001, 0.01, initial=0.0)
        line.push(0.01, 7.0)

        assert line.read(0.02) == 7.0
        assert line.read(0.01) == pytest.approx(6.3)

    def test_ring_overwrites_oldest(self):
        line = DelayLine(delay=10.0, capacity=4, initial=0.0)
        for k in range(1, 10):
            line.push(float(k), float(k))

        # only t = 6..9 survive; older queries hold the oldest kept sample
        assert line.read(12.0) == 6.0

    def test_vector_samples(self):
        line = DelayLine.for_step(0.02, 0.01, initial=np.zeros((3, 2)))
        line.push(0.01, np.ones((3, 2)))

        assert line.read(0.03).shape == (3, 2)
        assert np.allclose(line.read(0.03), 1.0)

    def test_timestamps_must_increase(self):
        line = DelayLine(delay=0.1, capacity=4, initial=0.0)
        with pytest.raises(DomainError, match="increase"):
            line.push(0.0, 1.0)

    def test_invalid_arguments(self):
        with pytest.raises(DomainError):
            DelayLine(delay=-0.1, capacity=4, initial=0.0)
        with pytest.raises(DomainError):
            DelayLine(delay=0.1, capacity=1, initial=0.0)


class TestRunScenario:
    def test_calm_formation_stays_put(self):
        trace = run_scenario(_scenario())

        assert trace.states.shape == (201, 3, 12)
        assert trace.controls.shape == (201, 3, 4)
        assert np.all(trace.states == 0.0)
        assert np.all(trace.controls == 0.0)
        assert np.all(trace.upwash == 0.0)

    def test_linear_in_perturbation(self):
        one = run_scenario(_scenario(perturbation="leader_lateral", perturbation_m=1.0))
        two = run_scenario(_scenario(perturbation="leader_lateral", perturbation_m=2.0))

        assert np.allclose(two.states, 2.0 * one.states, rtol=1e-9, atol=1e-12)

    def test_default_perturbation_is_fraction_of_span(self, params):
        trace = run_scenario(_scenario(perturbation="leader_lateral", duration_s=0.1))
        assert trace.states[0, 0, 1] == pytest.approx(0.2 * params.wingspan_m)

    def test_all_offset_perturbation(self):
        trace = run_scenario(_scenario(perturbation="all_offset", perturbation_m=0.5, duration_s=0.1))
        assert trace.states[0, :, 1] == pytest.approx([0.0, -0.5, -1.0])

    def test_explicit_initial_states(self):
        initial = np.zeros((3, 12))
        initial[2, 2] = 1.5
        trace = run_scenario(_scenario(initial_states=initial.tolist(), duration_s=0.1))

        assert trace.states[0, 2, 2] == 1.5

    def test_deterministic_with_turbulence(self):
        sc = _scenario(turbulence_intensity_frac=0.02, seed=9, duration_s=1.0)

        first = run_scenario(sc)
        second = run_scenario(sc)

        assert np.array_equal(first.states, second.states)
        assert np.any(first.states != 0.0)

    def test_leader_error_is_own_deviation(self):
        trace = run_scenario(_scenario(perturbation="leader_lateral", perturbation_m=1.0))
        assert np.array_equal(trace.errors[:, 0], -trace.states[:, 0, :3])

    def test_follower_error_tracks_leader(self):
        trace = run_scenario(_scenario(perturbation="leader_lateral", perturbation_m=1.0))
        expected = trace.states[:, 0, :3] - trace.states[:, 1, :3]

        assert np.allclose(trace.errors[:, 1], expected)

    def test_wake_head_follows_delayed_leader(self, params):
        sc = _scenario(n_aircraft=2, wake_enabled=True, perturbation="leader_lateral", duration_s=3.0)
        trace = run_scenario(sc)
        offset = optimal_offset(params)
        delay = offset[0] / params.cruise_speed_mps
        leader_y = trace.states[:, 0, 1]

        assert np.all(np.isnan(trace.wake_head[:, 0]))
        early = trace.t <= delay
        assert np.allclose(trace.wake_head[early, 1, 1], leader_y[0] + offset[1])
        late = trace.t > delay + 0.05
        expected = np.interp(trace.t[late] - delay, trace.t, leader_y) + offset[1]
        assert np.allclose(trace.wake_head[late, 1, 1], expected, atol=1e-9)
        assert np.all(trace.wake_head[:, 1, 0] == offset[0])

    def test_follower_starts_in_upwash(self):
        trace = run_scenario(_scenario(n_aircraft=2, wake_enabled=True, duration_s=0.1))

        assert np.all(trace.upwash[:, 0] == 0.0)
        assert trace.upwash[0, 1] > 0.0

    def test_rk4_convergence_order(self, model, params):
        initial = np.zeros((2, 12))
        initial[0, 6] = 0.05
        initial[0, 10] = 0.01
        open_loop = StateFeedbackGain(k=np.zeros((4, 12)))

        def final_state(dt: float) -> np.ndarray:
            sc = _scenario(n_aircraft=2, initial_states=initial.tolist(), duration_s=4.0, dt_s=dt)
            return run_scenario(sc, model, params, open_loop).states[-1]

        reference = final_state(0.005)
        coarse = np.linalg.norm(final_state(0.04) - reference)
        fine = np.linalg.norm(final_state(0.02) - reference)

        assert 10.0 < coarse / fine < 22.0

    def test_needs_full_aircraft(self, point_mass):
        with pytest.raises(ConfigurationError, match="12-state"):
            run_scenario(_scenario(), model=point_mass, params=AircraftParams())

    def test_divergence_guard(self, monkeypatch):
        monkeypatch.setenv("FORMFLIGHT_DIVERGENCE_THRESHOLD", "1.0")

        with pytest.raises(SimulationDivergedError) as exc_info:
            run_scenario(_scenario(perturbation="leader_lateral", perturbation_m=5.0))

        assert exc_info.value.aircraft == 0
        assert exc_info.value.time_s == pytest.approx(0.01)

    def test_csv_layout(self, tmp_path):
        trace = run_scenario(_scenario(duration_s=0.05))
        path = trace.to_csv(tmp_path / "trace.csv")

        lines = path.read_text().splitlines()
        header = lines[0].split(",")
        assert header[:3] == ["t", "aircraft_id", "x"]
        assert header[-4:] == ["e_y", "e_z", "e_x", "dT_pct"]
        assert len(header) == 2 + 12 + 4 + 4
        assert len(lines) == 1 + 6 * 3


class TestSoloBaseline:
    def test_followers_ignore_leader(self):
        trace = solo_baseline(_scenario(perturbation="leader_lateral", perturbation_m=1.0))

        assert np.any(trace.states[:, 0] != 0.0)
        assert np.all(trace.states[:, 1:] == 0.0)

    def test_wake_disabled(self):
        trace = solo_baseline(_scenario(n_aircraft=2, wake_enabled=True, duration_s=0.1))
        assert np.all(trace.upwash == 0.0)


class TestEnergyReport:
    def test_calm_formation(self, params):
        report = energy_report(run_scenario(_scenario()), params, window=1.0)

        assert len(report.aircraft) == 3
        assert all(a.mean_thrust_change_pct == 0.0 for a in report.aircraft)
        assert report.follower_mean_pct == 0.0
        assert not report.baseline_subtracted

    def test_window_longer_than_trace(self, params):
        with pytest.raises(DomainError, match="window"):
            energy_report(run_scenario(_scenario()), params, window=5.0)

    def test_baseline_subtraction(self, params):
        sc = _scenario(turbulence_intensity_frac=0.02, duration_s=1.0)
        trace = run_scenario(sc)

        report = energy_report(trace, params, window=0.5, baseline=trace)

        assert report.baseline_subtracted
        assert all(a.mean_thrust_change_pct == pytest.approx(0.0, abs=1e-12) for a in report.aircraft)

    def test_wake_lowers_follower_drag(self, params):
        trace = run_scenario(_scenario(n_aircraft=2, wake_enabled=True, duration_s=0.1))
        report = energy_report(trace, params, window=0.05)

        assert report.aircraft[0].induced_drag_change_pct == 0.0
        assert report.aircraft[1].mean_upwash_mps > 0.0
        assert report.aircraft[1].induced_drag_change_pct < 0.0


class TestAmplification:
    def test_needs_three_aircraft(self):
        trace = run_scenario(_scenario(n_aircraft=2, duration_s=0.1))
        with pytest.raises(DomainError, match="at least 3"):
            amplification_ratios(trace)

    def test_unperturbed_ratios_undefined(self):
        trace = run_scenario(_scenario(duration_s=0.5))
        assert amplification_ratios(trace) == [None, None]

    def test_transient_must_leave_samples(self):
        trace = run_scenario(_scenario(duration_s=0.5))
        with pytest.raises(DomainError, match="transient"):
            amplification_ratios(trace, transient=1.0)

    def test_ratios_for_perturbed_leader(self):
        trace = run_scenario(_scenario(n_aircraft=4, perturbation="leader_lateral", duration_s=10.0))
        ratios = amplification_ratios(trace)

        assert len(ratios) == 3
        assert all(r is not None and np.isfinite(r) and r > 0 for r in ratios)

    @pytest.mark.slow
    def test_structured_cascade_does_not_amplify(self):
        trace = run_scenario(load_scenario("fig_pdlqrsim"))
        assert max(amplification_ratios(trace)) <= 1.05

    @pytest.mark.slow
    def test_integral_lqr_cascade_amplifies(self):
        trace = run_scenario(load_scenario("fig_pdlqrsim").model_copy(update={"controller": "lqr-int"}))
        ratios = amplification_ratios(trace)

        assert sum(r > 1.0 for r in ratios) >= 7
        assert ratios[-1] > 1.5


class TestStaticWake:
    def test_single_follower_settles_in_wake(self, params):
        trace = run_scenario(_scenario(n_aircraft=2, controller="lqr-int", wake_enabled=True, duration_s=100.0))
        final = np.linalg.norm(trace.errors[-1, 1])

        assert final < 0.01 * params.wingspan_m
        assert trace.upwash[-1, 1] > 2.0

    @pytest.mark.slow
    @pytest.mark.parametrize("name", ["fig_wake_lqr_int", "fig_wake_structured"])
    def test_integral_controllers_reach_reference(self, params, name):
        trace = run_scenario(load_scenario(name))
        final = np.linalg.norm(trace.errors[-1, 1:], axis=1)

        assert np.all(final < 0.01 * params.wingspan_m)

    @pytest.mark.slow
    def test_lqr_steady_error_accumulates(self, params):
        trace = run_scenario(load_scenario("fig_wake_lqr"))
        e_y = np.abs(trace.errors[-1, 1:, 1])
        drift = np.abs(trace.states[-1, :, 1])

        assert np.all(e_y > 0.01 * params.wingspan_m)
        assert e_y.max() / e_y.min() < 1.02
        assert np.all(np.diff(drift) > 0.0)


class TestEnergySavings:
    @pytest.mark.slow
    def test_structured_formation_saves_uniformly(self, params):
        base = load_scenario("fig_energy")
        traces = run_ensemble([base.model_copy(update={"seed": seed}) for seed in range(5)])
        followers = np.array(
            [[a.mean_thrust_change_pct for a in energy_report(t, params).aircraft[1:]] for t in traces]
        )

        assert np.all(followers < 0.0)
        assert -20.0 <= followers.mean() <= -5.0
        per_follower = followers.mean(axis=0)
        assert not np.all(np.diff(per_follower) > 0.0)


class TestEnsemble:
    def test_sequential_and_parallel_agree(self):
        scenarios = [
            _scenario(name=f"s{k}", perturbation="leader_lateral", perturbation_m=float(k + 1), duration_s=0.5)
            for k in range(2)
        ]

        sequential = run_ensemble(scenarios, jobs=1)
        parallel = run_ensemble(scenarios, jobs=2)

        assert [t.scenario.name for t in parallel] == ["s0", "s1"]
        for a, b in zip(sequential, parallel):
            assert np.array_equal(a.states, b.states)

    def test_jobs_default_from_settings(self, mocker, monkeypatch):
        monkeypatch.setenv("FORMFLIGHT_JOBS", "3")
        pool = mocker.patch("formflight.formsim.ProcessPoolExecutor")
        pool.return_value.__enter__.return_value.map = map
        scenarios = [_scenario(name=f"s{k}", duration_s=0.1) for k in range(2)]

        traces = run_ensemble(scenarios)

        pool.assert_called_once_with(max_workers=2)
        assert [t.scenario.name for t in traces] == ["s0", "s1"]

    def test_divergence_crosses_process_boundary(self):
        error = pickle.loads(pickle.dumps(SimulationDivergedError(4, 12.5, 3e9)))

        assert (error.aircraft, error.time_s, error.magnitude) == (4, 12.5, 3e9)
        assert error.error_type == "simulation_diverged"
