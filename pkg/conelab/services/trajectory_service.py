"""Trajectory service.

This module runs full soliton trajectories and monitors them:
- Seeding, desingularizing and integrating in s
- Per-sample conservation, sign and monotonicity monitors
- The preserved inequalities of the Ricci-flat factor setting

Violations never abort a run; they are written into the record's flags.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from conelab.errors import SeedError
from conelab.integrator import (
    ComponentCeiling,
    ComponentFloor,
    ComponentNegative,
    Converged,
    integrate,
)
from conelab.models import ProblemSpec, SeedParams, TrajectoryOptions, TrajectoryRecord
from conelab.seed import taylor_seed, validate_seed_regime
from conelab.services.asymptotics import MIN_TAIL_SAMPLES, TAIL_DECADE
from conelab.soliton import diagnostics_table, make_einstein_projection, make_rhs

logger = logging.getLogger(__name__)

# Einstein runs converge well before this; it only bounds runaway cases.
EINSTEIN_S_HORIZON = 1e4
EINSTEIN_S2_TOL = 1e-12
BAD_EVENTS = ('stall', 'blowup', 'component-negative')


@dataclass
class InequalityReport:
    """Per-sample traces of the preserved inequalities and sign facts."""

    applicable: bool
    x1_gt_xi: np.ndarray
    x1_gt_sum: np.ndarray
    x1_gt_q: np.ndarray
    first_violation: Optional[dict]
    signs_applicable: bool
    u_negative: np.ndarray
    udot_negative: np.ndarray
    uddot_negative: np.ndarray
    first_sign_violation: Optional[dict]
    flags: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.first_violation is None and self.first_sign_violation is None

    def to_dict(self) -> dict:
        return {
            'applicable': self.applicable,
            'signs_applicable': self.signs_applicable,
            'first_violation': self.first_violation,
            'first_sign_violation': self.first_sign_violation,
            'passed': self.passed,
        }


def _first_false(trace: np.ndarray) -> Optional[int]:
    idx = np.flatnonzero(~trace)
    return int(idx[0]) if idx.size else None


class TrajectoryService:
    """Service for building and auditing trajectory records."""

    @staticmethod
    def run_trajectory(
        spec: ProblemSpec,
        params: SeedParams,
        options: Optional[TrajectoryOptions] = None,
    ) -> TrajectoryRecord:
        """Seed, integrate and monitor one trajectory.

        Regular runs stop at the L-floor. Einstein runs are projected onto
        S₁ = S₂ = 0 after every step and stop once |Xᵢ − 1/n| < einstein_tol.

        Args:
            spec: Problem specification
            params: Seed parameters
            options: Run options (defaults to TrajectoryOptions())

        Returns:
            TrajectoryRecord with flags for every violated monitor

        Raises:
            SeedError: Parameters rejected by validate_seed_regime
        """
        options = options or TrajectoryOptions()
        classification, reason = validate_seed_regime(spec, params)
        if classification == 'rejected':
            raise SeedError(f'Invalid seed: {reason}', {'params': params.to_dict()})

        seed = taylor_seed(spec, params, t0=options.t0, order=options.order,
                           project=options.project_seed)
        r = spec.r
        events = []
        project = None
        horizon = options.s_horizon
        if classification == 'regular':
            events.append(ComponentFloor(0, options.floor))
        else:
            target = 1.0 / spec.n
            tol = options.einstein_tol

            def converged(s, y):
                return bool(np.all(np.abs(y[1:1 + r] - target) < tol))

            events.append(Converged(converged))
            project = make_einstein_projection(spec)
            if math.isinf(horizon):
                horizon = EINSTEIN_S_HORIZON
        events.append(ComponentNegative(0))
        if options.t_horizon is not None:
            events.append(ComponentCeiling(2 * r + 1, options.t_horizon))

        logger.debug('Running %s trajectory for C=%.6g fbar=%s', classification,
                     params.C, list(params.fbar))
        traj = integrate(
            make_rhs(spec),
            seed.sstate.to_vector(),
            horizon,
            options.integrator,
            events,
            output_grid=options.output_grid,
            project=project,
        )
        table = diagnostics_table(spec, params.C, traj.y)
        record = TrajectoryRecord(
            spec=spec,
            params=params,
            seed=seed,
            s=traj.s,
            states=traj.y,
            s1=table['s1'],
            s2=table['s2'],
            rcal=table['rcal'],
            z=table['z'],
            residual=table['residual'],
            event=traj.event,
            classification=classification,
            options=options,
        )
        record.flags = TrajectoryService.monitor(record, options)
        if record.flags:
            logger.warning('Trajectory C=%.6g flagged: %s', params.C, '; '.join(record.flags))
        else:
            logger.debug('Trajectory C=%.6g accepted: %d samples, terminal %s at s=%.6g',
                         params.C, len(record), traj.event.kind, traj.event.s)
        return record

    @staticmethod
    def monitor(record: TrajectoryRecord, options: TrajectoryOptions) -> list:
        """Evaluate the per-sample invariants and return flag strings."""
        flags = []
        spec = record.spec
        C = record.params.C
        L = record.L

        if record.event.kind in BAD_EVENTS:
            flags.append(f'terminal event {record.event.kind} at s={record.event.s:.6g}')
        expected = 'component-floor' if record.classification == 'regular' else 'converged'
        if record.event.kind != expected and record.event.kind not in BAD_EVENTS:
            logger.info('Trajectory ended on %s rather than %s', record.event.kind, expected)
        if record.classification == 'regular' and record.event.kind == 'component-floor':
            flags.extend(TrajectoryService._tail_flags(record, options))

        bound = options.ctol * (1.0 + abs(C)) * L * L
        excess = record.residual > bound
        if np.any(excess):
            k = int(np.flatnonzero(excess)[0])
            worst = float(np.max(record.residual / (L * L)))
            flags.append(
                f'conservation: |S1-(C+eps*u)L^2|/L^2 reached {worst:.3g} '
                f'(limit {options.ctol * (1.0 + abs(C)):.3g}), first at s={record.s[k]:.6g}'
            )

        if record.classification == 'regular':
            if len(record) > 1 and not record.s1[1] < 0:
                flags.append('classification: S1 not negative at first post-seed sample')
            for name, values in (('S1', record.s1), ('S2', record.s2)):
                k = _first_false(values < 0)
                if k is not None:
                    flags.append(f'sign: {name} >= 0 at s={record.s[k]:.6g}')
        else:
            drift = float(np.max(np.abs(record.s2)))
            if drift > EINSTEIN_S2_TOL:
                flags.append(f'einstein: |sum d X - 1| reached {drift:.3g}')

        with np.errstate(divide='ignore', invalid='ignore'):
            ratio = record.Y / L[:, None]
        growth = ratio[1:] - ratio[:-1] * (1.0 + options.slack)
        bad = np.argwhere(growth > 0)
        if bad.size:
            k, i = (int(v) for v in bad[0])
            flags.append(f'monotonicity: Y{i + 1}/L increased at s={record.s[k + 1]:.6g}')
        return flags

    @staticmethod
    def _tail_flags(record: TrajectoryRecord, options: TrajectoryOptions) -> list:
        """Flags for a floor event that leaves no usable conical tail."""
        flags = []
        L = record.L
        peak = int(np.argmax(L))
        if peak == len(record) - 1:
            flags.append(f'floor: reached at s={record.event.s:.6g} before L turned around')
        elif L[peak] <= options.floor:
            flags.append(f'floor: L peaked at {L[peak]:.3g}, below the floor {options.floor:.3g}')
        n_tail = int(np.count_nonzero(record.t >= record.t[-1] / TAIL_DECADE))
        if n_tail < MIN_TAIL_SAMPLES:
            flags.append(f'tail: {n_tail} samples in the last decade of t, '
                         f'need {MIN_TAIL_SAMPLES}')
        return flags

    @staticmethod
    def preserved_inequalities_monitor(record: TrajectoryRecord) -> InequalityReport:
        """Trace X₁ > Xᵢ, X₁ > ΣdⱼXⱼ², X₁ > (ε/2)L² and the signs of u, u̇, ü.

        The inequality block applies when μᵢ = 0 for i ≥ 2; the sign facts
        apply to any record with C < 0 (checked for t > 0).
        """
        spec = record.spec
        X = record.X
        L = record.L
        q = 0.5 * spec.eps * L * L
        x1 = X[:, 0]
        x1_gt_xi = np.all(x1[:, None] > X[:, 1:], axis=1)
        x1_gt_sum = x1 > (X * X) @ spec.d_array
        x1_gt_q = x1 > q

        applicable = spec.ricci_flat_factors
        first_violation = None
        flags = []
        if applicable:
            for name, trace in (('X1 > Xi', x1_gt_xi), ('X1 > sum d X^2', x1_gt_sum),
                                ('X1 > (eps/2) L^2', x1_gt_q)):
                k = _first_false(trace)
                if k is not None and (first_violation is None or k < first_violation['index']):
                    first_violation = {'inequality': name, 'index': k, 's': float(record.s[k])}
            if first_violation:
                flags.append(f"inequality {first_violation['inequality']} fails at "
                             f"s={first_violation['s']:.6g}")

        C = record.params.C
        u = record.u
        with np.errstate(divide='ignore', invalid='ignore'):
            udot = record.s2 / L
            uddot = C + spec.eps * u - udot / L
        signs_applicable = C < 0
        first_sign_violation = None
        if signs_applicable:
            positive_t = record.t > 0
            for name, trace in (('u < 0', u < 0), ('udot < 0', udot < 0), ('uddot < 0', uddot < 0)):
                k = _first_false(trace | ~positive_t)
                if k is not None and (first_sign_violation is None
                                      or k < first_sign_violation['index']):
                    first_sign_violation = {'fact': name, 'index': k, 's': float(record.s[k])}
            if first_sign_violation:
                flags.append(f"sign fact {first_sign_violation['fact']} fails at "
                             f"s={first_sign_violation['s']:.6g}")

        return InequalityReport(
            applicable=applicable,
            x1_gt_xi=x1_gt_xi,
            x1_gt_sum=x1_gt_sum,
            x1_gt_q=x1_gt_q,
            first_violation=first_violation,
            signs_applicable=signs_applicable,
            u_negative=u < 0,
            udot_negative=udot < 0,
            uddot_negative=uddot < 0,
            first_sign_violation=first_sign_violation,
            flags=flags,
        )


run_trajectory = TrajectoryService.run_trajectory
preserved_inequalities_monitor = TrajectoryService.preserved_inequalities_monitor
