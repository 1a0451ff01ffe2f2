"""Planar limiting system of the sphere factor.

Restricting the s-system to L = 0 and Xᵢ = Yᵢ = 0 for i ≥ 2 leaves

    X′ = X(dX² − 1) + (d − 1)Y²
    Y′ = XY(dX − 1)

which is invariant and describes the C → −∞ limit. Its saddle at (1/d, 1/d)
has exactly one unstable branch entering the box 0 < X, Y < 1/d; that
branch is the limit trajectory used to design the shooting bracket.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import eig

from conelab.config import Config
from conelab.errors import PreconditionError, SpecError
from conelab.integrator import ComponentFloor, IntegratorConfig, integrate
from conelab.models import ProblemSpec, SState

logger = logging.getLogger(__name__)

SUBSYSTEM_INTEGRATOR = dict(rel_tol=1e-12, abs_tol=1e-14)


def _require_dim(d: int) -> None:
    if int(d) != d or d < 2:
        raise SpecError(f'Subsystem dimension must be an integer >= 2, got {d}')


@dataclass(frozen=True)
class SubState:
    X: float
    Y: float
    d: int

    def to_vector(self) -> np.ndarray:
        return np.array([self.X, self.Y], dtype=float)

    @property
    def in_box(self) -> bool:
        """Strictly inside 0 < X, Y < 1/d."""
        edge = 1.0 / self.d
        return 0 < self.X < edge and 0 < self.Y < edge


def rhs_sub(d: int, state) -> np.ndarray:
    """Derivative (X′, Y′) of the planar system at ``state`` = (X, Y)."""
    if isinstance(state, SubState):
        state = state.to_vector()
    X, Y = float(state[0]), float(state[1])
    return np.array([X * (d * X * X - 1.0) + (d - 1) * Y * Y, X * Y * (d * X - 1.0)])


def sub_rcal(d: int, X, Y):
    """Renormalized scalar curvature 2dX − d(d+1)X² − (d−1)dY² of the subsystem."""
    return 2 * d * X - d * (d + 1) * X * X - (d - 1) * d * Y * Y


def fixed_points(d: int) -> list:
    """(0,0), (±1/√d, 0) and (1/d, ±1/d)."""
    _require_dim(d)
    root = 1.0 / math.sqrt(d)
    return [(0.0, 0.0), (root, 0.0), (-root, 0.0), (1.0 / d, 1.0 / d), (1.0 / d, -1.0 / d)]


@dataclass(frozen=True, eq=False)
class SaddleEigen:
    """Linearization at the saddle (1/d, 1/d)."""

    d: int
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    closed_form: tuple
    unstable_vector: np.ndarray

    @property
    def mismatch(self) -> float:
        """Distance between the numerical and the closed-form eigenvalues."""
        return float(np.max(np.abs(np.sort(self.eigenvalues) - np.asarray(self.closed_form))))


def saddle_eigen(d: int) -> SaddleEigen:
    """Eigen-decomposition of the Jacobian [[3/d−1, 2(d−1)/d], [1/d, 0]]."""
    _require_dim(d)
    jac = np.array([[3.0 / d - 1.0, 2.0 * (d - 1) / d], [1.0 / d, 0.0]])
    values, vectors = eig(jac)
    values = np.real_if_close(values).real
    vectors = np.real_if_close(vectors).real
    tr = 3.0 / d - 1.0
    disc = math.sqrt(tr * tr + 8.0 * (d - 1) / (d * d))
    closed = ((tr - disc) / 2.0, (tr + disc) / 2.0)
    lam = closed[1]
    # second row gives v = (dλ, 1)
    unstable = np.array([d * lam, 1.0])
    unstable /= np.linalg.norm(unstable)
    return SaddleEigen(d=d, jacobian=jac, eigenvalues=values, eigenvectors=vectors,
                       closed_form=closed, unstable_vector=unstable)


def embed_substate(spec: ProblemSpec, sub: SubState) -> SState:
    """Place a subsystem state into the full s-state (L = 0, other factors zero)."""
    if spec.d[0] != sub.d:
        raise SpecError(f'Subsystem dimension {sub.d} does not match d[0]={spec.d[0]}')
    X = np.zeros(spec.r)
    Y = np.zeros(spec.r)
    X[0] = sub.X
    Y[0] = sub.Y
    return SState(L=0.0, X=X, Y=Y)


@dataclass(eq=False)
class SubsystemTrajectory:
    d: int
    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    event: str
    flags: list = field(default_factory=list)

    @property
    def rcal(self) -> np.ndarray:
        return sub_rcal(self.d, self.x, self.y)

    @property
    def ratio(self) -> np.ndarray:
        """X/Y², converging to d − 1."""
        return self.x / (self.y * self.y)

    def limits(self, window: float = 10.0) -> dict:
        """Extrapolate X/Y² and (X/Y² − (d−1))/Y² to Y = 0 with quadratic fits in Y².

        The fit uses samples with Y² ≤ window · Y²_end.
        """
        y2 = self.y * self.y
        mask = y2 <= window * y2[-1]
        if int(mask.sum()) < 4:
            mask = np.zeros_like(y2, dtype=bool)
            mask[-4:] = True
        w = y2[mask]
        scale = float(np.max(w))
        ratio = self.ratio[mask]
        second = (ratio - (self.d - 1)) / w
        deg = min(2, len(w) - 1)
        ratio_limit = float(np.polyfit(w / scale, ratio, deg)[-1])
        second_limit = float(np.polyfit(w / scale, second, deg)[-1])
        return {
            'ratio_terminal': float(ratio[-1]),
            'ratio_limit': ratio_limit,
            'ratio_expected': float(self.d - 1),
            'second_terminal': float(second[-1]),
            'second_limit': second_limit,
            'second_expected': float(2 * (self.d - 1) ** 2),
        }


def _integrate_sub(d: int, state0: np.ndarray, horizon: float, x_stop: Optional[float],
                   config: Optional[IntegratorConfig]):
    cfg = config or IntegratorConfig(**SUBSYSTEM_INTEGRATOR)
    events = [ComponentFloor(0, x_stop)] if x_stop is not None else []
    return integrate(lambda s, y: rhs_sub(d, y), state0, horizon, cfg, events)


def unstable_trajectory(
    d: int,
    offset: float = Config.SUBSYSTEM_OFFSET,
    x_stop: float = Config.SUBSYSTEM_X_STOP,
    horizon: float = math.inf,
    config: Optional[IntegratorConfig] = None,
) -> SubsystemTrajectory:
    """Follow the unstable branch of the saddle into the box until X = x_stop.

    Raises:
        PreconditionError: offset not positive, or the seed lands outside the box
    """
    _require_dim(d)
    if not offset > 0:
        raise PreconditionError(f'offset must be positive, got {offset}')
    eig_data = saddle_eigen(d)
    start = np.array([1.0 / d, 1.0 / d]) - offset * eig_data.unstable_vector
    sub0 = SubState(X=float(start[0]), Y=float(start[1]), d=d)
    if not sub0.in_box:
        raise PreconditionError(f'offset {offset} leaves the box 0 < X, Y < 1/d',
                                {'start': start.tolist()})

    logger.debug('Unstable branch for d=%d: lambda=%.12g seed=%s', d, eig_data.closed_form[1],
                 start.tolist())
    traj = _integrate_sub(d, start, horizon, x_stop, config)
    result = SubsystemTrajectory(d=d, s=traj.s, x=traj.y[:, 0], y=traj.y[:, 1],
                                 event=traj.event.kind)
    if traj.event.kind != 'component-floor':
        result.flags.append(f'terminal event {traj.event.kind} before X reached {x_stop:g}')
    if not (np.all(np.diff(result.x) < 0) and np.all(np.diff(result.y) < 0)):
        result.flags.append('X, Y not strictly decreasing along the branch')
    if result.flags:
        logger.warning('Unstable branch d=%d flagged: %s', d, '; '.join(result.flags))
    return result


@dataclass
class BoxReport:
    d: int
    contained: bool
    decayed: bool
    stayed_fixed: bool
    max_x: float
    max_y: float
    final: tuple

    @property
    def passed(self) -> bool:
        return self.contained and (self.decayed or self.stayed_fixed)


def box_preservation_check(d: int, state0, horizon: float = 1000.0,
                           config: Optional[IntegratorConfig] = None) -> BoxReport:
    """Integrate from a box state and check containment and decay.

    The saddle corner (1/d, 1/d) is accepted and must stay fixed.

    Raises:
        PreconditionError: state0 outside the box
    """
    _require_dim(d)
    if isinstance(state0, SubState):
        state0 = state0.to_vector()
    X0, Y0 = float(state0[0]), float(state0[1])
    edge = 1.0 / d
    corner = X0 == edge and Y0 == edge
    if not (corner or SubState(X0, Y0, d).in_box):
        raise PreconditionError(f'({X0}, {Y0}) is outside the box 0 < X, Y < 1/d')

    traj = _integrate_sub(d, np.array([X0, Y0]), horizon, None, config)
    x = traj.y[:, 0]
    y = traj.y[:, 1]
    slack = 1e-14
    contained = bool(np.all((x > 0) & (y > 0) & (x <= edge + slack) & (y <= edge + slack)))
    stayed_fixed = corner and bool(np.max(np.abs(x - edge)) < 1e-12
                                   and np.max(np.abs(y - edge)) < 1e-12)
    decayed = bool(max(x[-1], y[-1]) < 0.25 * max(X0, Y0))
    return BoxReport(d=d, contained=contained, decayed=decayed, stayed_fixed=stayed_fixed,
                     max_x=float(np.max(x)),
                     max_y=float(np.max(y)), final=(float(x[-1]), float(y[-1])))
