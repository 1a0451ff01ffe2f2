"""Tests for the shooting service."""

import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conelab.config import TestingConfig
from conelab.errors import BracketError, PreconditionError
from conelab.jobs.sweep import run_sweep
from conelab.models import (
    BracketSample,
    ConeSpec,
    ProblemSpec,
    SeedParams,
    ShootResult,
    TrajectoryOptions,
)
from conelab.services.asymptotics import extract_sigma
from conelab.services.shooting_service import ShootingService
from conelab.services.trajectory_service import run_trajectory


def fake_evaluator(sigma1_of_c, sigma_rest=None):
    """Stand-in for evaluate_sample with σ₁ = sigma1_of_c(C) and σᵢ = 2/f̄ᵢ."""
    def evaluate(spec, fbar, C, options, target, phase):
        sigma = [sigma1_of_c(C)] + [
            (sigma_rest or (lambda f: 2.0 / f))(f) for f in fbar
        ]
        coeff = ConeSpec.for_problem(spec, sigma).cone_scal_coeff
        report = SimpleNamespace(
            sigma=sigma,
            sigma_uncertainty=[1e-9] * len(sigma),
            low_confidence=False,
            scal_limit=(0.5 * spec.eps) ** 2 * coeff,
        )
        record = SimpleNamespace(
            params=SeedParams(fbar=fbar, C=C),
            seed=SimpleNamespace(t0=options.t0 or 1e-3),
            flags=[],
            rcal=np.ones(4),
        )
        sample = BracketSample(C=C, sigma1=sigma[0], uncertainty=1e-9,
                               low_confidence=False, phase=phase)
        return sample, record, report
    return evaluate


@pytest.fixture
def sqrt_model(mocker):
    """σ₁(C) = √(−C): continuous, → 0 as C → 0⁻ and → ∞ as C → −∞."""
    return mocker.patch('conelab.services.shooting_service.evaluate_sample',
                        side_effect=fake_evaluator(lambda C: math.sqrt(-C)))


class TestSolveForSigma1:
    """Tests for the σ₁ bisection."""

    def test_converges(self, problem, sqrt_model):
        service = ShootingService(tol=1e-4)
        result = service.solve_for_sigma1(problem, (1.0,), 3.0)
        assert result.converged
        assert result.params.C == pytest.approx(-9.0, rel=1e-3)
        assert abs(result.achieved.sigma[0] - 3.0) <= 1e-4 * 3.0
        assert result.iterations <= service.max_evaluations
        assert result.flags == []

    def test_history_is_recorded(self, problem, sqrt_model):
        service = ShootingService(tol=1e-4)
        result = service.solve_for_sigma1(problem, (1.0,), 0.2)
        phases = {sample.phase for sample in result.history}
        assert 'bracket' in phases
        assert 'bisect' in phases
        assert len(service.history) >= result.iterations

    def test_first_evaluation_at_minus_n(self, problem, sqrt_model):
        ShootingService().solve_for_sigma1(problem, (1.0,), 3.0)
        first_call = sqrt_model.call_args_list[0]
        assert first_call.args[2] == pytest.approx(-problem.n * problem.eps)

    def test_budget_exhausted(self, problem, sqrt_model):
        service = ShootingService(tol=1e-12, max_evaluations=6)
        result = service.solve_for_sigma1(problem, (1.0,), 3.0)
        assert result.status == 'budget'
        assert not result.converged
        assert result.params is not None

    def test_unbracketed_target(self, problem, mocker):
        mocker.patch('conelab.services.shooting_service.evaluate_sample',
                     side_effect=fake_evaluator(lambda C: 0.5))
        service = ShootingService()
        with pytest.raises(BracketError) as excinfo:
            service.solve_for_sigma1(problem, (1.0,), 3.0)
        assert excinfo.value.exit_code == 3
        samples = excinfo.value.details['samples']
        assert len(samples) > 1
        assert min(s['C'] for s in samples) >= -1e8 * problem.eps

    def test_nonpositive_target(self, problem, sqrt_model):
        with pytest.raises(PreconditionError):
            ShootingService().solve_for_sigma1(problem, (1.0,), 0.0)

    def test_parallel_expansion_batches(self, problem, mocker, sqrt_model):
        """With workers > 1 the bracket expansion evaluates a batch of θ values at once."""
        pool = mocker.patch('conelab.services.shooting_service.ProcessPoolExecutor')
        executor = pool.return_value.__enter__.return_value
        executor.map.side_effect = lambda fn, jobs: [
            fake_evaluator(lambda C: math.sqrt(-C))(*job)[0] for job in jobs]
        service = ShootingService(tol=1e-4, workers=3)
        result = service.solve_for_sigma1(problem, (1.0,), 20.0)
        assert result.converged
        assert executor.map.called


class TestMonotoneCheck:
    """Tests for the non-monotone σ₁(C) flag."""

    def _sample(self, C, sigma1):
        return BracketSample(C=C, sigma1=sigma1, uncertainty=1e-6, low_confidence=False,
                             phase='bracket')

    def test_monotone_samples(self):
        flags = []
        samples = [self._sample(-4.0, 2.0), self._sample(-1.0, 1.0), self._sample(-0.25, 0.5)]
        assert ShootingService()._check_monotone(samples, flags)
        assert flags == []

    def test_rise_toward_zero_is_flagged(self):
        flags = []
        samples = [self._sample(-4.0, 2.0), self._sample(-1.0, 2.5), self._sample(-0.25, 0.5)]
        assert not ShootingService()._check_monotone(samples, flags)
        assert 'non-monotone' in flags[0]

    def test_rise_within_uncertainty_ignored(self):
        flags = []
        samples = [self._sample(-4.0, 1.0), self._sample(-1.0, 1.0 + 1e-7)]
        assert ShootingService()._check_monotone(samples, flags)


class TestRealizeCone:
    """Tests for realize_cone and the flat-factor rescaling."""

    def test_realizes_two_factor_cone(self, problem, sqrt_model):
        cone = ConeSpec.for_problem(problem, (3.0, 4.0))
        result = ShootingService(tol=1e-4).realize_cone(problem, cone)
        assert result.converged
        assert result.params.fbar[0] == pytest.approx(0.5)
        assert result.rescale[0] == pytest.approx(2.0)
        assert result.achieved.sigma[1] == pytest.approx(4.0)
        assert result.flags == []

    def test_rescaled_run_reuses_seed_time(self, problem, sqrt_model):
        cone = ConeSpec.for_problem(problem, (3.0, 4.0))
        ShootingService(tol=1e-4).realize_cone(problem, cone)
        rescale_call = [c for c in sqrt_model.call_args_list if c.args[5] == 'rescale'][0]
        assert rescale_call.args[3].t0 == 1e-3

    def test_three_factors(self, problem3, sqrt_model):
        cone = ConeSpec.for_problem(problem3, (1.5, 1.0, 8.0))
        result = ShootingService(tol=1e-4).realize_cone(problem3, cone)
        assert result.params.fbar == pytest.approx((2.0, 0.25))
        assert result.achieved.sigma[1:] == pytest.approx([1.0, 8.0])

    def test_curved_factor_rejected(self, sqrt_model):
        spec = ProblemSpec(d=(2, 2), mu=(1, 1))
        cone = ConeSpec.for_problem(spec, (1.0, 1.0))
        with pytest.raises(PreconditionError):
            ShootingService().realize_cone(spec, cone)

    def test_zero_radius_rejected(self, problem, sqrt_model):
        cone = ConeSpec.for_problem(problem, (0.0, 1.0))
        with pytest.raises(PreconditionError, match='Einstein'):
            ShootingService().realize_cone(problem, cone)

    def test_link_mismatch_rejected(self, problem, problem3, sqrt_model):
        cone = ConeSpec.for_problem(problem3, (1.0, 1.0, 1.0))
        with pytest.raises(PreconditionError):
            ShootingService().realize_cone(problem, cone)

    def test_rescale_needs_flat_factors(self, sqrt_model):
        spec = ProblemSpec(d=(2, 2), mu=(1, 1))
        base = SimpleNamespace(achieved=None, params=None)
        with pytest.raises(PreconditionError):
            ShootingService().rescale_for_ricci_flat(spec, base, (1.0,))


@pytest.mark.slow
class TestShootingEndToEnd:
    """Shooting against real trajectories."""

    def test_recovers_c_of_known_trajectory(self, problem, regular_record):
        options = TrajectoryOptions.from_config(TestingConfig)
        target = extract_sigma(regular_record).sigma[0]
        service = ShootingService(options=options, tol=1e-3)
        result = service.solve_for_sigma1(problem, regular_record.params.fbar, target)
        assert result.converged
        assert result.params.C == pytest.approx(regular_record.params.C, rel=2e-2)


class TestRescalingEquivariance:
    """f̄₂ ↦ f̄₂/c with a shared seed time maps Y₂ ↦ cY₂ and leaves the rest."""

    SCALE = 2.0

    @pytest.fixture(scope='class')
    def runs(self, problem, regular_params):
        grid = np.linspace(2.0, 400.0, 200)
        options = replace(TrajectoryOptions.from_config(TestingConfig), output_grid=grid)
        record = run_trajectory(problem, regular_params, options)
        report = extract_sigma(record)
        base = ShootResult(params=regular_params, achieved=report, history=[],
                           rescale=(1.0,), iterations=0, status='converged',
                           t0=record.seed.t0, record=record)
        service = ShootingService(options=options)
        result = service.rescale_for_ricci_flat(problem, base, (self.SCALE * report.sigma[1],))
        return grid, base, result

    def test_scales(self, runs):
        _, base, result = runs
        assert result.rescale == pytest.approx((self.SCALE,))
        assert result.params.fbar == pytest.approx((base.params.fbar[0] / self.SCALE,))
        assert result.t0 == base.t0

    def test_seed_differs_only_in_y2(self, runs):
        _, base, result = runs
        before = base.record.seed.sstate.to_vector()
        after = result.record.seed.sstate.to_vector()
        expected = before.copy()
        expected[4] *= self.SCALE
        assert_allclose(after, expected, rtol=1e-12)

    def test_samples_on_shared_grid(self, runs):
        grid, base, result = runs
        for s in grid:
            if s > min(base.record.s[-1], result.record.s[-1]):
                break
            k0 = int(np.flatnonzero(base.record.s == s)[0])
            k1 = int(np.flatnonzero(result.record.s == s)[0])
            before = base.record.states[k0]
            after = result.record.states[k1]
            assert after[4] == pytest.approx(self.SCALE * before[4], rel=1e-7)
            assert_allclose(np.delete(after, 4), np.delete(before, 4), rtol=1e-7, atol=1e-12)

    def test_sigma_follows_scale(self, runs):
        _, base, result = runs
        assert result.achieved.sigma[0] == pytest.approx(base.achieved.sigma[0], rel=1e-6)
        assert result.achieved.sigma[1] == pytest.approx(
            self.SCALE * base.achieved.sigma[1], rel=1e-6)


SHOOT_TOL = 1e-4


@pytest.fixture(scope='module')
def realized(problem):
    """realize_cone results by target σ₁, computed once per module."""
    cache = {}

    def _realize(sigma1):
        if sigma1 not in cache:
            service = ShootingService(options=TrajectoryOptions.from_config(TestingConfig),
                                      tol=SHOOT_TOL)
            cache[sigma1] = service.realize_cone(problem, ConeSpec.for_problem(problem,
                                                                               [sigma1, 1.0]))
        return cache[sigma1]

    return _realize


@pytest.mark.slow
class TestRealizeConeEndToEnd:
    """realize_cone on real trajectories across the range of σ₁."""

    @pytest.mark.parametrize('sigma1', [0.5, 2.0, 10.0])
    def test_realizes_target(self, realized, sigma1):
        result = realized(sigma1)
        assert result.converged
        got = result.achieved.sigma
        assert abs(got[0] - sigma1) <= SHOOT_TOL * sigma1
        assert abs(got[1] - 1.0) <= SHOOT_TOL
        assert not any(flag.startswith('realized') for flag in result.flags)

    def test_sweep_spans_targets(self, problem, realized):
        targets = [0.1, 0.5, 2.0, 10.0]
        Cs = [realized(sigma1).params.C for sigma1 in targets]
        assert all(a > b for a, b in zip(Cs, Cs[1:]))
        frame = run_sweep(problem, (1.0,), Cs, TrajectoryOptions.from_config(TestingConfig))
        assert (frame['status'] != 'error').all()
        sigma1 = frame['sigma1'].to_numpy()
        assert np.all(np.diff(sigma1) > 0)
        assert_allclose(sigma1, targets, rtol=2 * SHOOT_TOL)
