"""Shooting service.

Finds singular-orbit data whose trajectory is asymptotic to a prescribed cone:
- σ₁ is matched by bisection in C, parameterized as C = −ε·exp(θ)
- σ₂,…,σᵣ of Ricci-flat factors are matched by rescaling f̄ᵢ, which scales Yᵢ
  and leaves the rest of the trajectory unchanged

σ₁(C) is continuous with σ₁ → 0 as C → 0⁻ and σ₁ → ∞ as C → −∞. Monotonicity
is not assumed; every evaluation is logged and reported.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Optional

import numpy as np

from conelab.config import Config
from conelab.errors import BracketError, ConeLabError, PreconditionError, SpecError
from conelab.models import (
    BracketSample,
    ConeSpec,
    ProblemSpec,
    SeedParams,
    ShootResult,
    TrajectoryOptions,
)
from conelab.services.asymptotics import extract_sigma, quotient_trap_check
from conelab.services.trajectory_service import run_trajectory

logger = logging.getLogger(__name__)

C_MIN_FACTOR = 1e8
C_MAX_FACTOR = 1e-8
SCAL_TOL = 1e-3


def evaluate_sample(spec: ProblemSpec, fbar: tuple, C: float, options: TrajectoryOptions,
                    target: Optional[float], phase: str) -> tuple:
    """Run one trajectory and summarize σ₁; module-level so worker pools can pickle it.

    Returns:
        (BracketSample, TrajectoryRecord or None, AsymptoticReport or None)
    """
    params = SeedParams(fbar=fbar, C=C)
    try:
        record = run_trajectory(spec, params, options)
        report = extract_sigma(record)
    except ConeLabError as exc:
        logger.warning('Evaluation at C=%.6g failed: %s', C, exc.message)
        return BracketSample(C=C, sigma1=math.nan, uncertainty=math.nan, low_confidence=True,
                             phase=phase, error=exc.message), None, None

    above = below = False
    if target is not None:
        traps = quotient_trap_check(record, target)
        above, below = traps.certified_above, traps.certified_below
    error = None
    if record.flags:
        error = '; '.join(record.flags)
    sample = BracketSample(
        C=C,
        sigma1=report.sigma[0],
        uncertainty=report.sigma_uncertainty[0],
        low_confidence=report.low_confidence,
        phase=phase,
        certified_above=above,
        certified_below=below,
        error=error,
    )
    return sample, record, report


def _pool_sample(args: tuple) -> BracketSample:
    return evaluate_sample(*args)[0]


class ShootingService:
    """Inverse problem: seed parameters from target cone radii."""

    def __init__(
        self,
        options: Optional[TrajectoryOptions] = None,
        tol: float = Config.SHOOT_TOL,
        max_evaluations: int = Config.MAX_EVALUATIONS,
        bracket_factor: float = Config.BRACKET_FACTOR,
        workers: int = 1,
    ):
        self.options = options or TrajectoryOptions.from_config()
        self.tol = tol
        self.max_evaluations = max_evaluations
        self.bracket_factor = bracket_factor
        self.workers = max(1, int(workers))
        self.history = []

    def _log(self, sample: BracketSample) -> BracketSample:
        self.history.append(sample)
        logger.debug('[%s] C=%.10g sigma1=%.10g (+-%.2g)', sample.phase, sample.C,
                     sample.sigma1, sample.uncertainty)
        return sample

    @property
    def evaluations(self) -> int:
        return len(self.history)

    def sigma1_of_C(self, spec: ProblemSpec, fbar, C: float,
                    target: Optional[float] = None, phase: str = 'single') -> tuple:
        """σ₁ of the trajectory seeded at (f̄, C).

        Returns:
            (BracketSample, TrajectoryRecord, AsymptoticReport); the record and
            report are None when the evaluation failed
        """
        sample, record, report = evaluate_sample(spec, tuple(fbar), C, self.options,
                                                 target, phase)
        self._log(sample)
        return sample, record, report

    def _expand(self, spec, fbar, target, thetas, phase) -> list:
        """Evaluate a run of θ values, on the worker pool when configured."""
        eps = spec.eps
        Cs = [-eps * math.exp(theta) for theta in thetas]
        if self.workers > 1 and len(Cs) > 1:
            jobs = [(spec, tuple(fbar), C, self.options, target, phase) for C in Cs]
            with ProcessPoolExecutor(max_workers=self.workers) as pool:
                samples = list(pool.map(_pool_sample, jobs))
            return [self._log(s) for s in samples]
        return [self.sigma1_of_C(spec, fbar, C, target, phase)[0] for C in Cs]

    def _check_monotone(self, samples: list, flags: list) -> bool:
        good = sorted((s for s in samples if math.isfinite(s.sigma1)), key=lambda s: s.C)
        sig = np.array([s.sigma1 for s in good])
        unc = np.array([s.uncertainty for s in good])
        if len(sig) < 2:
            return True
        # σ₁ should fall as C rises toward 0
        rises = np.diff(sig) > (unc[1:] + unc[:-1])
        if np.any(rises):
            k = int(np.flatnonzero(rises)[0])
            msg = (f'non-monotone sigma1(C): {sig[k]:.6g} at C={good[k].C:.6g} '
                   f'< {sig[k + 1]:.6g} at C={good[k + 1].C:.6g}')
            flags.append(msg)
            logger.warning('%s; other roots may exist, see the sweep command', msg)
            return False
        return True

    def solve_for_sigma1(self, spec: ProblemSpec, fbar, target: float,
                         tol: Optional[float] = None) -> ShootResult:
        """Find C with |σ₁(C) − target| ≤ tol·target for fixed f̄.

        Args:
            spec: Problem specification (d₁ ≥ 2, μᵢ ≥ 0)
            fbar: Fixed (f̄₂,…,f̄ᵣ)
            target: Target σ₁ > 0
            tol: Relative tolerance (defaults to the service tolerance)

        Returns:
            ShootResult; status is 'converged' or 'budget'

        Raises:
            PreconditionError: target not positive
            BracketError: No sign change of σ₁ − target in [−10⁸ε, −10⁻⁸ε]
        """
        tol = self.tol if tol is None else tol
        if not (math.isfinite(target) and target > 0):
            raise PreconditionError(f'target sigma1 must be positive, got {target}')
        spec.require_conical()
        fbar = tuple(float(x) for x in fbar)
        eps = spec.eps
        start_len = len(self.history)
        theta_lo_bound = math.log(C_MAX_FACTOR)
        theta_hi_bound = math.log(C_MIN_FACTOR)
        step = math.log(self.bracket_factor)
        flags = []

        def g(sample):
            return sample.sigma1 - target

        logger.info('Shooting for sigma1=%.6g with fbar=%s (tol %.1e)', target, list(fbar), tol)
        theta0 = math.log(spec.n)
        first = self._expand(spec, fbar, target, [theta0], 'bracket')[0]
        if not math.isfinite(first.sigma1):
            raise BracketError('Initial bracket evaluation failed',
                               {'samples': [s.to_dict() for s in self.history[start_len:]]})

        # σ₁ grows with θ: go up if below target, down if above
        direction = 1.0 if g(first) < 0 else -1.0
        inner_theta, inner = theta0, first
        outer_theta, outer = None, None
        theta = theta0
        while outer is None:
            batch = []
            while len(batch) < self.workers:
                theta += direction * step
                if not theta_lo_bound <= theta <= theta_hi_bound:
                    break
                batch.append(theta)
            if not batch:
                break
            for th, sample in zip(batch, self._expand(spec, fbar, target, batch, 'bracket')):
                if not math.isfinite(sample.sigma1):
                    raise BracketError(
                        f'Evaluation failed at C={sample.C:.6g} while bracketing',
                        {'samples': [s.to_dict() for s in self.history[start_len:]]},
                    )
                if g(sample) * g(inner) <= 0:
                    outer_theta, outer = th, sample
                    break
                inner_theta, inner = th, sample

        if outer is None:
            logger.error('No bracket for sigma1=%.6g within C in [%g, %g]',
                         target, -C_MIN_FACTOR * eps, -C_MAX_FACTOR * eps)
            raise BracketError(
                f'sigma1={target} not bracketed for C in [{-C_MIN_FACTOR * eps:g}, '
                f'{-C_MAX_FACTOR * eps:g}]',
                {'samples': [s.to_dict() for s in self.history[start_len:]]},
            )

        lo_theta, lo = (inner_theta, inner) if g(inner) < 0 else (outer_theta, outer)
        hi_theta, hi = (outer_theta, outer) if lo is inner else (inner_theta, inner)
        logger.info('Bracket C in [%.6g, %.6g] after %d evaluations',
                    hi.C, lo.C, len(self.history) - start_len)

        best = min((lo, hi), key=lambda s: abs(g(s)))
        status = 'converged' if abs(g(best)) <= tol * target else 'budget'
        record = report = None
        while status != 'converged' and len(self.history) - start_len < self.max_evaluations:
            if not g(lo) < 0 <= g(hi):
                flags.append(f'bracket invariant lost between C={lo.C:.6g} and C={hi.C:.6g}')
                logger.error(flags[-1])
            mid_theta = 0.5 * (lo_theta + hi_theta)
            mid, record, report = self.sigma1_of_C(spec, fbar, -eps * math.exp(mid_theta),
                                                   target, 'bisect')
            if not math.isfinite(mid.sigma1):
                raise BracketError(f'Evaluation failed at C={mid.C:.6g} while bisecting',
                                   {'samples': [s.to_dict() for s in self.history[start_len:]]})
            if abs(g(mid)) < abs(g(best)):
                best = mid
            if abs(g(mid)) <= tol * target:
                status = 'converged'
                break
            if g(mid) < 0:
                lo_theta, lo = mid_theta, mid
            else:
                hi_theta, hi = mid_theta, mid
            if hi_theta - lo_theta < 1e-14 * max(1.0, abs(hi_theta)):
                flags.append('bisection interval collapsed before reaching tolerance')
                break

        self._check_monotone(self.history[start_len:], flags)
        iterations = len(self.history) - start_len
        if record is None or record.params.C != best.C:
            _, record, report = self.sigma1_of_C(spec, fbar, best.C, target, 'final')
        if status != 'converged':
            logger.error('Shooting stopped after %d evaluations: best sigma1=%.8g for target %.8g',
                         iterations, best.sigma1, target)
        else:
            logger.info('Converged: C=%.10g sigma1=%.10g after %d evaluations',
                        best.C, best.sigma1, iterations)
        if report is not None and report.low_confidence:
            flags.append('low-confidence sigma extraction at the solution')
        return ShootResult(
            params=SeedParams(fbar=fbar, C=best.C),
            achieved=report,
            history=list(self.history[start_len:]),
            rescale=tuple(1.0 for _ in fbar),
            iterations=iterations,
            status=status,
            t0=record.seed.t0 if record else None,
            flags=flags,
            record=record,
        )

    def rescale_for_ricci_flat(self, spec: ProblemSpec, base: ShootResult, targets,
                               target_sigma1: Optional[float] = None) -> ShootResult:
        """Match σ₂,…,σᵣ by f̄ᵢ ↦ f̄ᵢ/cᵢ with cᵢ = target σᵢ / achieved σᵢ.

        The rescaled run reuses the base seed time, so its seed differs from
        the base seed only by Yᵢ ↦ cᵢYᵢ. If σ₁ drifts beyond tolerance the
        new f̄ is re-bracketed.

        Raises:
            PreconditionError: some μᵢ ≠ 0 for i ≥ 2, or base has no report
        """
        if not spec.ricci_flat_factors:
            raise PreconditionError('Rescaling needs mu_i = 0 for i >= 2', {'mu': list(spec.mu)})
        if base.achieved is None or base.params is None:
            raise PreconditionError('Base shooting result has no achieved sigma')
        targets = tuple(float(x) for x in targets)
        if len(targets) != spec.r - 1 or not all(x > 0 for x in targets):
            raise PreconditionError(f'Expected {spec.r - 1} positive target sigmas, got {targets}')

        sigma_base = base.achieved.sigma
        scales = tuple(tgt / ach for tgt, ach in zip(targets, sigma_base[1:]))
        fbar = tuple(f / c for f, c in zip(base.params.fbar, scales))
        C = base.params.C
        target_sigma1 = sigma_base[0] if target_sigma1 is None else target_sigma1
        flags = list(base.flags)

        saved = self.options
        self.options = replace(self.options, t0=base.t0)
        try:
            sample, record, report = self.sigma1_of_C(spec, fbar, C, target_sigma1, 'rescale')
        finally:
            self.options = saved
        if report is None:
            raise BracketError(f'Rescaled run failed: {sample.error}',
                               {'samples': [sample.to_dict()]})

        history = list(base.history) + [sample]
        iterations = base.iterations + 1
        status = base.status
        if abs(report.sigma[0] - target_sigma1) > self.tol * target_sigma1:
            logger.warning('sigma1 drifted to %.8g after rescaling; re-bracketing', report.sigma[0])
            again = self.solve_for_sigma1(spec, fbar, target_sigma1)
            history += again.history
            iterations += again.iterations
            status = again.status
            C = again.params.C
            record, report = again.record, again.achieved
            flags += again.flags

        for i, (c, tgt) in enumerate(zip(scales, targets), start=2):
            got = report.sigma[i - 1]
            if abs(got - tgt) > self.tol * tgt:
                flags.append(f'sigma{i}={got:.8g} misses target {tgt:.8g} after rescaling by {c:.6g}')
        logger.info('Rescaled fbar=%s by %s', list(fbar), list(scales))
        return ShootResult(
            params=SeedParams(fbar=fbar, C=C),
            achieved=report,
            history=history,
            rescale=scales,
            iterations=iterations,
            status=status,
            t0=record.seed.t0,
            flags=flags,
            record=record,
        )

    def realize_cone(self, spec: ProblemSpec, cone: ConeSpec, tol: Optional[float] = None,
                     fbar0=None) -> ShootResult:
        """Seed parameters whose soliton is asymptotic to ``cone``.

        Raises:
            PreconditionError: cone radii not positive, link mismatch, or the
                factor data outside d₁ ≥ 2, μᵢ = 0
        """
        tol = self.tol if tol is None else tol
        if any(not sigma > 0 for sigma in cone.sigma):
            raise PreconditionError(
                'Cone radii must be positive; Einstein trajectories (sigma = 0) '
                'have no conical end to realize', {'sigma': list(cone.sigma)})
        if tuple(cone.d) != spec.d or tuple(cone.mu) != spec.mu:
            raise PreconditionError('Cone link does not match the problem factors',
                                    {'cone': cone.to_dict(), 'problem': spec.to_dict()})
        try:
            spec.require_ricci_flat()
        except SpecError as exc:
            raise PreconditionError(exc.message, exc.details) from exc

        fbar0 = tuple(fbar0) if fbar0 is not None else tuple(1.0 for _ in range(spec.r - 1))
        saved_tol = self.tol
        self.tol = tol
        try:
            base = self.solve_for_sigma1(spec, fbar0, cone.sigma[0])
            result = self.rescale_for_ricci_flat(spec, base, cone.sigma[1:],
                                                 target_sigma1=cone.sigma[0])
        finally:
            self.tol = saved_tol

        report = result.achieved
        for i, (got, want) in enumerate(zip(report.sigma, cone.sigma), start=1):
            if abs(got - want) > tol * want:
                result.flags.append(f'realized sigma{i}={got:.8g} differs from {want:.8g}')
        unit = (0.5 * spec.eps) ** 2
        expected = unit * cone.cone_scal_coeff
        if abs(report.scal_limit - expected) > SCAL_TOL * max(abs(expected), unit):
            result.flags.append(f'scal limit {report.scal_limit:.8g} differs from '
                                f'(eps/2)^2*coeff={expected:.8g}')
        if cone.cone_scal_coeff > 0 and result.record is not None:
            if not np.all(result.record.rcal[1:] > 0):
                result.flags.append('cone has positive scalar curvature but sampled Rcal <= 0')
        logger.info('Cone %s realized with fbar=%s C=%.10g (%s)', list(cone.sigma),
                    list(result.params.fbar), result.params.C, result.status)
        return result
