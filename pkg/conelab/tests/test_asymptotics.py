"""Tests for tail extraction and the asymptotic checks."""

import math
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conelab.config import ReferenceConfig, TestingConfig
from conelab.errors import PreconditionError, SpecError
from conelab.models import ProblemSpec, SeedParams, SState, TrajectoryOptions
from conelab.services.asymptotics import (
    SIGMA_POWERS,
    center_manifold_state,
    comparison_lemma_harness,
    expander_asymptotics_check,
    extract_sigma,
    origin_attraction_check,
    quotient_trap_check,
    richardson,
    tail_limit,
)
from conelab.services.trajectory_service import run_trajectory

UNIT = 0.25  # (eps/2)² for eps = 1


@pytest.fixture(scope='module')
def report(regular_record):
    return extract_sigma(regular_record)


class TestTailFits:
    """Tests for the least-squares tail fits."""

    def test_recovers_constant_of_polynomial_tail(self):
        t = np.linspace(10.0, 100.0, 50)
        values = 2.0 + 3.0 / t - 0.5 / t ** 2
        limit, rms = tail_limit(t, values)
        assert limit == pytest.approx(2.0, abs=1e-10)
        assert rms < 1e-12

    def test_sigma_powers_skip_first_order(self):
        """log(Y/X) ≈ log σ + b/t² + c/t³ is fitted without a 1/t term."""
        t = np.linspace(20.0, 200.0, 40)
        values = math.log(1.5) + 0.3 / t ** 2 - 2.0 / t ** 3
        limit, _ = tail_limit(t, values, SIGMA_POWERS)
        assert math.exp(limit) == pytest.approx(1.5, rel=1e-10)

    def test_few_samples_fall_back_to_lower_degree(self):
        t = np.array([10.0, 20.0])
        limit, _ = tail_limit(t, np.array([1.0, 1.0]))
        assert limit == pytest.approx(1.0)

    def test_richardson_removes_linear_error(self):
        h = np.array([0.04, 0.02, 0.01])
        values = 5.0 + 2.0 * h
        assert richardson(h, values, 0, 2) == pytest.approx(5.0)

    def test_richardson_equal_steps(self):
        h = np.array([0.01, 0.01])
        assert richardson(h, np.array([1.0, 2.0]), 0, 1) == 2.0


class TestExtractSigma:
    """Tests for extract_sigma on integrated trajectories."""

    def test_sigma_positive_and_convergent(self, report):
        assert all(s > 0 for s in report.sigma)
        assert report.sigma_divergent == [False, False]

    def test_uncertainty_is_small(self, report):
        for sigma, unc in zip(report.sigma, report.sigma_uncertainty):
            assert unc < 1e-2 * sigma

    def test_fit_agrees_with_raw_tail(self, report):
        for sigma, raw in zip(report.sigma, report.fit['sigma_raw']):
            assert raw == pytest.approx(sigma, rel=1e-2)

    def test_refined_limits(self, problem, report):
        for got, mu, sigma in zip(report.refined, problem.mu, report.sigma):
            assert got == pytest.approx(UNIT * (mu * sigma * sigma + 1.0), rel=1e-2)

    def test_scal_limit_matches_cone(self, report):
        assert report.scal_limit == pytest.approx(UNIT * report.cone_scal_coeff,
                                                  abs=1e-2 * max(UNIT * abs(report.cone_scal_coeff),
                                                                 UNIT))

    def test_cone_scal_coeff(self, report):
        sigma1 = report.sigma[0]
        assert report.cone_scal_coeff == pytest.approx(2.0 * sigma1 ** 2 - 6.0)

    def test_z_and_y_limits(self, report):
        assert report.fit['z_limit'] == pytest.approx(-1.0, abs=1e-2)
        assert report.fit['y1_over_l2_limit'] == pytest.approx(
            report.fit['y1_over_l2_expected'], rel=1e-2)

    def test_scalar_curvature_at_orbit(self, regular_record, report):
        assert report.fit['r0'] == pytest.approx(report.fit['r0_expected'], abs=1e-5)

    def test_to_dict(self, report):
        data = report.to_dict()
        assert set(data) >= {'sigma', 'sigma_uncertainty', 'scal_limit', 'fit', 'low_confidence'}

    def test_einstein_report(self, einstein_record):
        rep = extract_sigma(einstein_record)
        assert rep.sigma == [0.0, 0.0]
        assert all(rep.sigma_divergent)
        assert math.isnan(rep.scal_limit)

    def test_rejects_record_without_floor_event(self, problem, testing_options):
        options = replace(testing_options, t_horizon=5.0)
        record = run_trajectory(problem, SeedParams((1.0,), -1.0), options)
        assert record.event.kind == 't-horizon'
        with pytest.raises(PreconditionError):
            extract_sigma(record)

    def test_rejects_short_tail(self, regular_record, record_subset):
        n = len(regular_record)
        peak = int(np.argmax(regular_record.L))
        record = record_subset(regular_record, np.array([0, peak, n - 3, n - 2, n - 1]))
        with pytest.raises(PreconditionError) as excinfo:
            extract_sigma(record)
        assert excinfo.value.details['tail_samples'] == 3

    def test_rejects_floor_before_turnaround(self, regular_record, record_subset):
        record = record_subset(regular_record, slice(0, 1))
        with pytest.raises(PreconditionError):
            extract_sigma(record)

    def test_requires_sphere_dimension_two(self):
        spec = ProblemSpec(d=(1, 2), mu=(0, 1))
        options = TrajectoryOptions.from_config(TestingConfig)
        options.t_horizon = 0.5
        record = run_trajectory(spec, SeedParams((1.0,), -1.0), options)
        with pytest.raises(SpecError):
            extract_sigma(record)

    def test_flat_factor_scaling(self, problem, regular_record, report):
        """Rescaling fbar of a flat factor by 1/c scales its sigma by c and leaves sigma1."""
        options = TrajectoryOptions.from_config(TestingConfig)
        scaled = run_trajectory(problem, SeedParams((2.0,), regular_record.params.C), options)
        other = extract_sigma(scaled)
        assert other.sigma[0] == pytest.approx(report.sigma[0], rel=1e-4)
        assert other.sigma[1] == pytest.approx(0.5 * report.sigma[1], rel=1e-3)


class TestExpanderAsymptotics:
    """Tests for expander_asymptotics_check function."""

    def test_regular_record_passes(self, regular_record):
        result = expander_asymptotics_check(regular_record, tol=1e-2)
        assert result.passed
        assert result.lt_limit == pytest.approx(1.0, abs=1e-2)
        assert all(drop >= 10 for drop in result.y_over_l_drop)

    def test_einstein_record_rejected(self, einstein_record):
        with pytest.raises(PreconditionError):
            expander_asymptotics_check(einstein_record)


class TestComparisonLemma:
    """Tests for comparison_lemma_harness function."""

    def test_converges_to_ratio(self):
        result = comparison_lemma_harness(lambda s: 1.0 + math.exp(-s),
                                          lambda s: 2.0 + math.exp(-s), f0=0.0)
        assert result.passed
        assert result.expected == pytest.approx(2.0)
        assert result.limit == pytest.approx(2.0, abs=1e-8)

    def test_explicit_limits(self):
        result = comparison_lemma_harness(lambda s: 3.0, lambda s: 1.5, f0=5.0,
                                          c1_limit=3.0, c2_limit=1.5)
        assert result.limit == pytest.approx(0.5, abs=1e-8)

    def test_nonpositive_limit_rejected(self):
        with pytest.raises(PreconditionError):
            comparison_lemma_harness(lambda s: -1.0, lambda s: 1.0, f0=0.0)


class TestOriginAttraction:
    """Tests for the Lyapunov check near the origin."""

    def test_center_manifold_state(self, problem):
        state = center_manifold_state(problem, np.random.default_rng(0))
        q = 0.5 * state.L ** 2
        np.testing.assert_allclose(state.X, problem.mu_array * state.Y ** 2 + q)

    def test_lyapunov_decreases(self, problem):
        state = center_manifold_state(problem, np.random.default_rng(0))
        result = origin_attraction_check(problem, state)
        assert result.passed
        assert result.v_final < result.v_initial
        assert result.x_final < result.x_initial

    def test_needs_positive_components(self, problem):
        state = SState(L=0.0, X=np.zeros(2), Y=np.full(2, 0.01))
        with pytest.raises(PreconditionError):
            origin_attraction_check(problem, state)

    def test_negative_mu_rejected(self):
        spec = ProblemSpec(d=(2, 1), mu=(1, -1))
        state = SState(L=0.01, X=np.zeros(2), Y=np.full(2, 0.01))
        with pytest.raises(PreconditionError):
            origin_attraction_check(spec, state)


class TestQuotientTraps:
    """Tests for quotient_trap_check soundness."""

    def test_never_certifies_the_wrong_side(self, regular_record, report):
        sigma1 = report.sigma[0]
        high = quotient_trap_check(regular_record, 10.0 * sigma1)
        low = quotient_trap_check(regular_record, 0.1 * sigma1)
        assert not high.certified_above
        assert not low.certified_below
        assert not (high.certified_above and high.certified_below)

    def test_nonpositive_target(self, regular_record):
        with pytest.raises(PreconditionError):
            quotient_trap_check(regular_record, 0.0)


@pytest.mark.slow
class TestOriginAttractionAtScale:
    """Lyapunov decrease from many seeded center-manifold states."""

    @pytest.mark.parametrize('seed', range(10))
    def test_two_and_three_factors(self, problem, problem3, seed):
        rng = np.random.default_rng(1000 + seed)
        for spec in (problem, problem3):
            result = origin_attraction_check(spec, center_manifold_state(spec, rng))
            assert result.passed, (spec.d, seed)


@pytest.mark.slow
class TestExtractionStability:
    """σ must not depend on the integration scheme or on the seed time."""

    @pytest.fixture(scope='class')
    def reference_pair(self, problem, regular_params):
        fixed = TrajectoryOptions.from_config(ReferenceConfig)
        adaptive = replace(TrajectoryOptions.from_config(TestingConfig), floor=fixed.floor)
        return (run_trajectory(problem, regular_params, adaptive),
                run_trajectory(problem, regular_params, fixed))

    def test_fixed_step_reference_agrees(self, reference_pair):
        adaptive, fixed = reference_pair
        assert adaptive.event.kind == fixed.event.kind == 'component-floor'
        assert fixed.t[-1] == pytest.approx(adaptive.t[-1], rel=1e-6)
        assert_allclose(extract_sigma(fixed).sigma, extract_sigma(adaptive).sigma, rtol=1e-6)

    def test_halving_seed_time(self, problem, regular_params, regular_record, report):
        options = TrajectoryOptions.from_config(TestingConfig)
        options.t0 = 0.5 * regular_record.seed.t0
        halved = run_trajectory(problem, regular_params, options)
        assert halved.flags == []
        assert_allclose(extract_sigma(halved).sigma, report.sigma, rtol=1e-6)
