"""
Invariant verification job.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from conelab.errors import ConeLabError, PreconditionError
from conelab.models import ProblemSpec, SeedParams, TrajectoryOptions
from conelab.seed import recover_seed_params
from conelab.services.asymptotics import (
    center_manifold_state,
    expander_asymptotics_check,
    extract_sigma,
    origin_attraction_check,
)
from conelab.services.trajectory_service import preserved_inequalities_monitor, run_trajectory
from conelab.soliton import derivative_identities_check

logger = logging.getLogger(__name__)

IDENTITY_TOL = 1e-10
LIMIT_TOL = 1e-3
EINSTEIN_LIMIT_TOL = 1e-6
RECOVERY_TOL = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: Optional[float] = None
    threshold: Optional[float] = None
    detail: str = ''

    def to_dict(self) -> dict:
        return {'name': self.name, 'passed': self.passed, 'value': self.value,
                'threshold': self.threshold, 'detail': self.detail}


@dataclass
class VerificationReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {'passed': self.passed, 'checks': [c.to_dict() for c in self.checks]}

    def table(self) -> str:
        """Plain-text pass/fail table."""
        width = max((len(c.name) for c in self.checks), default=4)
        lines = [f"{'check'.ljust(width)}  result  value        threshold"]
        for c in self.checks:
            value = '-' if c.value is None else f'{c.value:.3e}'
            threshold = '-' if c.threshold is None else f'{c.threshold:.1e}'
            result = 'PASS' if c.passed else 'FAIL'
            lines.append(f'{c.name.ljust(width)}  {result}    {value.ljust(11)}  {threshold}')
        return '\n'.join(lines)


def _relative(got: float, want: float, unit: float) -> float:
    return abs(got - want) / max(abs(want), unit)


def run_verification(spec: ProblemSpec, params: SeedParams,
                     options: Optional[TrajectoryOptions] = None) -> VerificationReport:
    """
    Run the invariant suite on the trajectory seeded at ``params``.

    Checks the derivative identities, conservation, the sign and monotonicity
    monitors, preserved inequalities, seed recovery, the limits at the end of
    the trajectory and attraction of the origin. Failures are logged, not raised.
    """
    logger.info("Starting invariant verification for C=%g, fbar=%s",
                params.C, list(params.fbar))
    options = options or TrajectoryOptions.from_config()
    report = VerificationReport()
    checks = report.checks

    try:
        record = run_trajectory(spec, params, options)
    except ConeLabError as e:
        logger.error("Error building trajectory for verification: %s", e.message)
        checks.append(CheckResult('trajectory', False, detail=e.message))
        return report

    checks.append(CheckResult(
        'terminal_event',
        record.event.kind not in ('stall', 'blowup', 'component-negative'),
        detail=f'{record.event.kind} at s={record.event.s:.6g}',
    ))

    picks = np.unique(np.linspace(0, len(record) - 1, 25).astype(int))
    worst = max(derivative_identities_check(spec, record.sample(int(k))[1]).max_residual()
                for k in picks)
    checks.append(CheckResult('derivative_identities', worst <= IDENTITY_TOL, worst, IDENTITY_TOL))

    L = record.L
    C = record.params.C
    conservation = float(np.max(record.residual / (L * L))) / (1.0 + abs(C))
    checks.append(CheckResult('conservation', conservation <= options.ctol, conservation,
                              options.ctol))

    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = record.Y / L[:, None]
    growth = float(np.max(ratio[1:] / ratio[:-1] - 1.0)) if len(record) > 1 else -1.0
    checks.append(CheckResult('y_over_l_monotone', growth <= options.slack, growth, options.slack))

    if record.classification == 'regular':
        worst_sign = float(max(np.max(record.s1), np.max(record.s2)))
        checks.append(CheckResult('s1_s2_negative', worst_sign < 0, worst_sign, 0.0))

    monitor = preserved_inequalities_monitor(record)
    if monitor.applicable:
        checks.append(CheckResult('preserved_inequalities', monitor.first_violation is None,
                                  detail=str(monitor.first_violation or '')))
    if monitor.signs_applicable:
        checks.append(CheckResult('u_sign_facts', monitor.first_sign_violation is None,
                                  detail=str(monitor.first_sign_violation or '')))

    recovered = recover_seed_params(spec, record)
    miss = max([abs(recovered.C - C) / (1.0 + abs(C))]
               + [abs(a - b) / b for a, b in zip(recovered.fbar, params.fbar)])
    checks.append(CheckResult('seed_recovery', miss <= RECOVERY_TOL, miss, RECOVERY_TOL))

    eps = spec.eps
    if record.classification == 'einstein':
        n = spec.n
        gap = max(float(np.max(np.abs(record.X[-1] - 1.0 / n))),
                  abs(0.5 * eps * L[-1] ** 2 - 1.0 / n))
        checks.append(CheckResult('einstein_limits', gap <= EINSTEIN_LIMIT_TOL, gap,
                                  EINSTEIN_LIMIT_TOL))
    else:
        try:
            spec.require_conical()
        except ConeLabError as e:
            checks.append(CheckResult('asymptotics', True, detail=f'skipped: {e.message}'))
        else:
            try:
                _asymptotic_checks(spec, record, checks)
            except PreconditionError as e:
                checks.append(CheckResult('asymptotics', False, detail=e.message))

    if all(m >= 0 for m in spec.mu):
        state0 = center_manifold_state(spec, np.random.default_rng(0))
        attraction = origin_attraction_check(spec, state0)
        checks.append(CheckResult('origin_attraction', attraction.passed,
                                  attraction.v_final / attraction.v_initial))

    failures = report.failures
    if failures:
        logger.error("Invariant failures found: %s", [c.to_dict() for c in failures])
    else:
        logger.info("Verification complete: all %d checks passed", len(checks))
    return report


def _asymptotic_checks(spec: ProblemSpec, record, checks: list) -> None:
    eps = spec.eps
    unit = (0.5 * eps) ** 2
    report = extract_sigma(record)
    positive = all(math.isfinite(s) and s > 0 for s in report.sigma)
    checks.append(CheckResult('sigma_positive', positive, min(report.sigma)))

    worst = max(
        _relative(got, unit * (m * s * s + 1.0), unit)
        for got, m, s in zip(report.refined, spec.mu, report.sigma)
    )
    checks.append(CheckResult('refined_limits', worst <= LIMIT_TOL, worst, LIMIT_TOL))

    scal = _relative(report.scal_limit, unit * report.cone_scal_coeff, unit)
    checks.append(CheckResult('scal_limit', scal <= LIMIT_TOL, scal, LIMIT_TOL))

    r0 = abs(report.fit['r0'] - report.fit['r0_expected']) / (1.0 + abs(record.params.C))
    checks.append(CheckResult('r0_extrapolation', r0 <= RECOVERY_TOL, r0, RECOVERY_TOL))

    z_gap = abs(report.fit['z_limit'] + 1.0)
    checks.append(CheckResult('z_limit', z_gap <= LIMIT_TOL, z_gap, LIMIT_TOL))

    expander = expander_asymptotics_check(record, tol=LIMIT_TOL)
    checks.append(CheckResult('expander_asymptotics', expander.passed,
                              abs(expander.lt_limit - 1.0), LIMIT_TOL))

    if report.cone_scal_coeff > 0:
        checks.append(CheckResult('positive_scalar_curvature',
                                  bool(np.all(record.rcal[1:] > 0)),
                                  float(np.min(record.rcal[1:]))))
