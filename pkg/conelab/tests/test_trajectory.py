"""Tests for the trajectory service and its monitors."""

from dataclasses import replace

import numpy as np
import pytest

from conelab.config import TestingConfig
from conelab.errors import SeedError
from conelab.models import ProblemSpec, SeedParams, TrajectoryOptions
from conelab.services.asymptotics import MIN_TAIL_SAMPLES, TAIL_DECADE
from conelab.services.trajectory_service import (
    TrajectoryService,
    preserved_inequalities_monitor,
    run_trajectory,
)
from conelab.soliton import diagnostics


class TestRegularTrajectory:
    """Tests for trajectories with C < 0."""

    def test_reaches_floor(self, regular_record):
        assert regular_record.classification == 'regular'
        assert regular_record.event.kind == 'component-floor'
        assert regular_record.L[-1] == pytest.approx(TestingConfig.L_FLOOR, abs=1e-8)

    def test_accepted_without_flags(self, regular_record):
        assert regular_record.flags == []
        assert regular_record.status == 'accepted'

    def test_conservation_along_trajectory(self, regular_record):
        L = regular_record.L
        assert np.max(regular_record.residual / (L * L)) < 1e-6 * 2.0

    def test_s1_s2_negative(self, regular_record):
        assert np.all(regular_record.s1[1:] < 0)
        assert np.all(regular_record.s2[1:] < 0)

    def test_y_over_l_decreasing(self, regular_record):
        ratio = regular_record.Y / regular_record.L[:, None]
        assert np.all(np.diff(ratio, axis=0) <= 1e-10 * ratio[:-1])

    def test_carried_t_increases(self, regular_record):
        assert regular_record.t[0] == pytest.approx(regular_record.seed.t0, rel=1e-12)
        assert np.all(np.diff(regular_record.t) > 0)

    def test_u_decreases(self, regular_record):
        assert np.all(np.diff(regular_record.u) < 0)

    def test_seed_below_floor_still_reaches_tail(self, regular_record):
        """The seed starts under the floor; the run must rise through it first."""
        assert regular_record.L[0] < TestingConfig.L_FLOOR
        assert regular_record.L.max() > 10 * TestingConfig.L_FLOOR
        t = regular_record.t
        assert np.count_nonzero(t >= t[-1] / TAIL_DECADE) > MIN_TAIL_SAMPLES
        assert regular_record.t[-1] > 50.0

    def test_sample_view(self, regular_record):
        s, state, diag = regular_record.sample(5)
        assert s == regular_record.s[5]
        assert state.L == regular_record.L[5]
        assert diag.s1 == regular_record.s1[5]
        assert len(diag.inequality_flags) == 3

    def test_sample_flags_match_diagnostics(self, problem, regular_record):
        for k in (1, len(regular_record) // 2, len(regular_record) - 1):
            _, state, diag = regular_record.sample(k)
            expected = diagnostics(problem, regular_record.params.C, state)
            assert diag.inequality_flags == expected.inequality_flags
            assert diag.s1 == pytest.approx(expected.s1, abs=1e-14)


class TestEinsteinTrajectory:
    """Tests for trajectories with C = 0."""

    def test_converges_to_fixed_point(self, problem, einstein_record):
        assert einstein_record.classification == 'einstein'
        assert einstein_record.event.kind == 'converged'
        np.testing.assert_allclose(einstein_record.X[-1], 1.0 / problem.n, atol=1e-8)

    def test_stays_on_einstein_locus(self, einstein_record):
        assert np.max(np.abs(einstein_record.s2)) <= 1e-12
        assert einstein_record.flags == []

    def test_l_limit(self, problem, einstein_record):
        assert 0.5 * problem.eps * einstein_record.L[-1] ** 2 == pytest.approx(
            1.0 / problem.n, abs=1e-6)


class TestRunOptions:
    """Tests for run options and rejected input."""

    def test_rejected_seed_raises(self, problem):
        with pytest.raises(SeedError):
            run_trajectory(problem, SeedParams((1.0,), 2.0))

    def test_t_horizon(self, problem, testing_options):
        options = replace(testing_options, t_horizon=1.0)
        record = run_trajectory(problem, SeedParams((1.0,), -1.0), options)
        assert record.event.kind == 't-horizon'
        assert record.t[-1] == pytest.approx(1.0, abs=1e-8)

    def test_output_grid(self, problem, testing_options):
        options = replace(testing_options, output_grid=[10.0, 20.0], t_horizon=2.0)
        record = run_trajectory(problem, SeedParams((1.0,), -1.0), options)
        assert 10.0 in record.s

    def test_explicit_t0(self, problem, testing_options):
        options = replace(testing_options, t0=5e-4, t_horizon=0.5)
        record = run_trajectory(problem, SeedParams((1.0,), -1.0), options)
        assert record.seed.t0 == 5e-4

    def test_options_to_dict(self):
        data = TrajectoryOptions.from_config(TestingConfig).to_dict()
        assert data['floor'] == TestingConfig.L_FLOOR
        assert data['s_horizon'] is None
        assert data['integrator']['mode'] == 'adaptive'


class TestMonitors:
    """Tests for the record monitors."""

    def test_tight_conservation_tolerance_flags(self, regular_record, testing_options):
        flags = TrajectoryService.monitor(regular_record, replace(testing_options, ctol=1e-30))
        assert any(flag.startswith('conservation') for flag in flags)

    def test_preserved_inequalities_hold(self, regular_record):
        report = preserved_inequalities_monitor(regular_record)
        assert report.applicable
        assert report.signs_applicable
        assert report.passed
        assert report.flags == []

    def test_inequalities_not_applicable_for_curved_factors(self, testing_options):
        spec = ProblemSpec(d=(2, 2), mu=(1, 1))
        record = run_trajectory(spec, SeedParams((1.0,), -1.0),
                                replace(testing_options, t_horizon=2.0))
        report = preserved_inequalities_monitor(record)
        assert not report.applicable
        assert report.first_violation is None

    def test_sign_facts_skip_einstein(self, einstein_record):
        report = preserved_inequalities_monitor(einstein_record)
        assert not report.signs_applicable
        assert report.first_sign_violation is None


class TestFloorMonitor:
    """Tests for the flags raised on degenerate floor events."""

    def test_floor_at_seed_is_flagged(self, regular_record, testing_options, record_subset):
        record = record_subset(regular_record, slice(0, 1))
        flags = TrajectoryService.monitor(record, testing_options)
        assert any('before L turned around' in flag for flag in flags)

    def test_floor_on_rising_stretch_is_flagged(self, regular_record, testing_options,
                                                record_subset):
        k = int(np.argmax(regular_record.L)) // 2
        record = record_subset(regular_record, slice(0, k))
        flags = TrajectoryService.monitor(record, testing_options)
        assert any('before L turned around' in flag for flag in flags)

    def test_short_tail_is_flagged(self, regular_record, testing_options, record_subset):
        n = len(regular_record)
        peak = int(np.argmax(regular_record.L))
        record = record_subset(regular_record, np.array([0, peak, n - 3, n - 2, n - 1]))
        flags = TrajectoryService.monitor(record, testing_options)
        assert any(flag.startswith('tail:') for flag in flags)

    def test_low_peak_is_flagged(self, regular_record, testing_options):
        options = replace(testing_options, floor=10.0 * regular_record.L.max())
        flags = TrajectoryService.monitor(regular_record, options)
        assert any('below the floor' in flag for flag in flags)

    def test_full_run_has_no_floor_flags(self, regular_record, testing_options):
        flags = TrajectoryService.monitor(regular_record, testing_options)
        assert not any(flag.startswith(('floor', 'tail')) for flag in flags)


@pytest.mark.slow
class TestPreservedInequalitiesAcrossRuns:
    """The preserved inequalities and sign facts on a grid of regular runs."""

    @pytest.mark.parametrize('fbar', [0.5, 2.0])
    @pytest.mark.parametrize('C', [-0.25, -0.5, -1.0, -2.0, -4.0, -8.0])
    def test_hold(self, problem, testing_options, C, fbar):
        record = run_trajectory(problem, SeedParams((fbar,), C), testing_options)
        assert record.event.kind == 'component-floor'
        assert record.flags == []
        report = preserved_inequalities_monitor(record)
        assert report.applicable and report.signs_applicable
        assert report.passed, report.to_dict()
