"""Domain types for conelab.

The soliton is a multiple warped product dt² + Σ fᵢ(t)² gᵢ over factors of
dimension dᵢ with Einstein constants μᵢ. Two coordinate systems are used:
the arc-length t-system (TState) and the desingularized s-system (SState),
whose flat vector layout is (L, X₁..Xᵣ, Y₁..Yᵣ, t, u).
"""

import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from conelab.config import Config
from conelab.errors import SpecError, StateValidationError
from conelab.integrator import Event, IntegratorConfig


@dataclass(frozen=True)
class ProblemSpec:
    """Factor dimensions d, Einstein constants mu and expander constant eps."""

    d: tuple
    mu: tuple
    eps: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'd', tuple(int(x) for x in self.d))
        object.__setattr__(self, 'mu', tuple(float(x) for x in self.mu))
        object.__setattr__(self, 'eps', float(self.eps))
        self.validate()

    @property
    def r(self) -> int:
        return len(self.d)

    @property
    def n(self) -> int:
        """Hypersurface dimension n = Σdᵢ."""
        return sum(self.d)

    @property
    def size(self) -> int:
        """Length of the flat s-state vector."""
        return 2 * self.r + 3

    @property
    def d_array(self) -> np.ndarray:
        return np.asarray(self.d, dtype=float)

    @property
    def mu_array(self) -> np.ndarray:
        return np.asarray(self.mu, dtype=float)

    def validate(self) -> None:
        """Check the structural invariants.

        Raises:
            SpecError: r < 2, mismatched lengths, d₁ < 1, μ₁ ≠ d₁ − 1 or ε ≤ 0
        """
        if len(self.d) < 2:
            raise SpecError('At least two factors are required (r >= 2)', {'r': len(self.d)})
        if len(self.mu) != len(self.d):
            raise SpecError('d and mu must have the same length',
                            {'d': list(self.d), 'mu': list(self.mu)})
        if any(di < 1 for di in self.d):
            raise SpecError('Factor dimensions must be positive', {'d': list(self.d)})
        if not all(math.isfinite(m) for m in self.mu):
            raise SpecError('Einstein constants must be finite', {'mu': list(self.mu)})
        if not (math.isfinite(self.eps) and self.eps > 0):
            raise SpecError(f'eps must be positive, got {self.eps}')
        if abs(self.mu[0] - (self.d[0] - 1)) > 1e-12:
            raise SpecError(
                f'mu[0] must equal d[0] - 1 = {self.d[0] - 1} (round sphere factor), '
                f'got {self.mu[0]}'
            )

    def require_conical(self) -> None:
        """Hypotheses of the asymptotically conical pipeline."""
        if self.d[0] < 2:
            raise SpecError(f'd[0] must be at least 2 for cone extraction, got {self.d[0]}')
        if any(m < 0 for m in self.mu[1:]):
            raise SpecError('mu[i] must be nonnegative for i >= 2', {'mu': list(self.mu)})

    def require_ricci_flat(self) -> None:
        """Hypotheses of the cone realization pipeline (μᵢ = 0 for i ≥ 2)."""
        self.require_conical()
        if any(m != 0 for m in self.mu[1:]):
            raise SpecError('mu[i] must vanish for i >= 2', {'mu': list(self.mu)})

    @property
    def ricci_flat_factors(self) -> bool:
        return all(m == 0 for m in self.mu[1:])

    def to_dict(self) -> dict:
        return {'d': list(self.d), 'mu': list(self.mu), 'eps': self.eps}

    @classmethod
    def from_dict(cls, data: dict) -> 'ProblemSpec':
        return cls(d=tuple(data['d']), mu=tuple(data['mu']), eps=data.get('eps', 1.0))


@dataclass(frozen=True)
class SeedParams:
    """Singular-orbit data (f̄₂,…,f̄ᵣ, C)."""

    fbar: tuple
    C: float

    def __post_init__(self):
        object.__setattr__(self, 'fbar', tuple(float(x) for x in self.fbar))
        object.__setattr__(self, 'C', float(self.C))

    def to_dict(self) -> dict:
        return {'fbar': list(self.fbar), 'C': self.C}


@dataclass(frozen=True, eq=False)
class TState:
    """Arc-length coordinates (t, f, ḟ, u, u̇)."""

    t: float
    f: np.ndarray
    fdot: np.ndarray
    u: float
    udot: float

    @property
    def shape_operator(self) -> np.ndarray:
        """Diagonal entries ḟᵢ/fᵢ."""
        return self.fdot / self.f


@dataclass(frozen=True, eq=False)
class SState:
    """Desingularized coordinates (L, X, Y) plus the carried t and u."""

    L: float
    X: np.ndarray
    Y: np.ndarray
    t: float = 0.0
    u: float = 0.0

    def to_vector(self) -> np.ndarray:
        return np.concatenate(([self.L], self.X, self.Y, [self.t, self.u])).astype(float)

    @classmethod
    def from_vector(cls, vec, r: int) -> 'SState':
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (2 * r + 3,):
            raise StateValidationError(
                f'State vector must have length {2 * r + 3}, got shape {vec.shape}'
            )
        return cls(
            L=float(vec[0]),
            X=vec[1:1 + r].copy(),
            Y=vec[1 + r:1 + 2 * r].copy(),
            t=float(vec[-2]),
            u=float(vec[-1]),
        )


@dataclass(frozen=True)
class Diagnostics:
    """Derived scalars at one state."""

    s1: float
    s2: float
    rcal: float
    z: float
    conservation_residual: float
    inequality_flags: tuple

    @property
    def z_defined(self) -> bool:
        return math.isfinite(self.z)


@dataclass(frozen=True, eq=False)
class SeedResult:
    """State just off the singular orbit, in both coordinate systems."""

    t0: float
    tstate: TState
    sstate: SState
    order: int
    est_error: float
    # |S₁ − (C+εu)L²| at the seed
    residual: float
    projected: bool
    a3: float
    b: tuple


@dataclass
class TrajectoryOptions:
    """Run-level options for building a trajectory record."""

    floor: float = Config.L_FLOOR
    ctol: float = Config.CONSERVATION_TOL
    einstein_tol: float = Config.EINSTEIN_TOL
    slack: float = Config.MONOTONE_SLACK
    order: int = Config.SEED_ORDER
    t0: Optional[float] = None
    project_seed: bool = True
    s_horizon: float = math.inf
    t_horizon: Optional[float] = None
    output_grid: Optional[Any] = None
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)

    @classmethod
    def from_config(cls, cfg=Config) -> 'TrajectoryOptions':
        return cls(
            floor=cfg.L_FLOOR,
            ctol=cfg.CONSERVATION_TOL,
            einstein_tol=cfg.EINSTEIN_TOL,
            slack=cfg.MONOTONE_SLACK,
            order=cfg.SEED_ORDER,
            integrator=IntegratorConfig(
                rel_tol=cfg.REL_TOL,
                abs_tol=cfg.ABS_TOL,
                max_step=cfg.MAX_STEP,
                min_step=cfg.MIN_STEP,
                max_steps=cfg.MAX_STEPS,
                mode=cfg.MODE,
                fixed_step=cfg.FIXED_STEP,
            ),
        )

    def to_dict(self) -> dict:
        return {
            'floor': self.floor,
            'ctol': self.ctol,
            'einstein_tol': self.einstein_tol,
            'order': self.order,
            't0': self.t0,
            'project_seed': self.project_seed,
            's_horizon': None if math.isinf(self.s_horizon) else self.s_horizon,
            't_horizon': self.t_horizon,
            'integrator': self.integrator.to_dict(),
        }


@dataclass(eq=False)
class TrajectoryRecord:
    """Sampled s-trajectory with per-sample diagnostics and monitor results."""

    spec: ProblemSpec
    params: SeedParams
    seed: SeedResult
    s: np.ndarray
    states: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    rcal: np.ndarray
    z: np.ndarray
    residual: np.ndarray
    event: Event
    classification: str
    flags: list = field(default_factory=list)
    options: Optional[TrajectoryOptions] = None

    @property
    def status(self) -> str:
        return 'flagged' if self.flags else 'accepted'

    def __len__(self) -> int:
        return len(self.s)

    @property
    def L(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def X(self) -> np.ndarray:
        r = self.spec.r
        return self.states[:, 1:1 + r]

    @property
    def Y(self) -> np.ndarray:
        r = self.spec.r
        return self.states[:, 1 + r:1 + 2 * r]

    @property
    def t(self) -> np.ndarray:
        return self.states[:, -2]

    @property
    def u(self) -> np.ndarray:
        return self.states[:, -1]

    @property
    def scalar_curvature(self) -> np.ndarray:
        """R = 𝓡/L² per sample."""
        with np.errstate(divide='ignore', invalid='ignore'):
            return self.rcal / self.L ** 2

    def sample(self, k: int) -> tuple:
        """Return (s, SState, Diagnostics) for sample k."""
        from conelab.soliton import inequality_flags

        state = SState.from_vector(self.states[k], self.spec.r)
        diag = Diagnostics(
            s1=float(self.s1[k]),
            s2=float(self.s2[k]),
            rcal=float(self.rcal[k]),
            z=float(self.z[k]),
            conservation_residual=float(self.residual[k]),
            inequality_flags=inequality_flags(self.spec, state),
        )
        return float(self.s[k]), state, diag


@dataclass
class AsymptoticReport:
    """Cone data extracted from the tail of a trajectory."""

    sigma: list
    sigma_uncertainty: list
    sigma_divergent: list
    refined: list
    refined_uncertainty: list
    scal_limit: float
    scal_uncertainty: float
    cone_scal_coeff: float
    low_confidence: bool = False
    flags: list = field(default_factory=list)
    fit: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            'sigma': list(self.sigma),
            'sigma_uncertainty': list(self.sigma_uncertainty),
            'sigma_divergent': list(self.sigma_divergent),
            'refined': list(self.refined),
            'refined_uncertainty': list(self.refined_uncertainty),
            'scal_limit': self.scal_limit,
            'scal_uncertainty': self.scal_uncertainty,
            'cone_scal_coeff': self.cone_scal_coeff,
            'low_confidence': self.low_confidence,
            'flags': list(self.flags),
            'fit': dict(self.fit),
        }


@dataclass(frozen=True)
class ConeSpec:
    """Target cone dt² + Σ(σᵢ⁻¹t)²gᵢ over a link with factor data d, mu."""

    sigma: tuple
    d: tuple
    mu: tuple

    def __post_init__(self):
        object.__setattr__(self, 'sigma', tuple(float(x) for x in self.sigma))
        object.__setattr__(self, 'd', tuple(int(x) for x in self.d))
        object.__setattr__(self, 'mu', tuple(float(x) for x in self.mu))

    @property
    def n(self) -> int:
        return sum(self.d)

    @property
    def cone_scal_coeff(self) -> float:
        """Cone scalar curvature times t²: Σdᵢμᵢσᵢ² − n(n−1)."""
        n = self.n
        return sum(di * mi * si ** 2 for di, mi, si in zip(self.d, self.mu, self.sigma)) \
            - n * (n - 1)

    @classmethod
    def for_problem(cls, spec: ProblemSpec, sigma) -> 'ConeSpec':
        return cls(sigma=tuple(sigma), d=spec.d, mu=spec.mu)

    def to_dict(self) -> dict:
        return {
            'sigma': list(self.sigma),
            'd': list(self.d),
            'mu': list(self.mu),
            'cone_scal_coeff': self.cone_scal_coeff,
        }


@dataclass(frozen=True)
class BracketSample:
    """One σ₁(C) evaluation made while shooting."""

    C: float
    sigma1: float
    uncertainty: float
    low_confidence: bool
    phase: str
    certified_above: bool = False
    certified_below: bool = False
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            'C': self.C,
            'sigma1': self.sigma1,
            'uncertainty': self.uncertainty,
            'low_confidence': self.low_confidence,
            'phase': self.phase,
            'certified_above': self.certified_above,
            'certified_below': self.certified_below,
            'error': self.error,
        }


@dataclass
class ShootResult:
    """Outcome of a shooting solve."""

    params: Optional[SeedParams]
    achieved: Optional[AsymptoticReport]
    history: list
    rescale: tuple
    iterations: int
    status: str
    t0: Optional[float] = None
    flags: list = field(default_factory=list)
    record: Optional[TrajectoryRecord] = None

    @property
    def converged(self) -> bool:
        return self.status == 'converged'

    def to_dict(self) -> dict:
        return {
            'params': self.params.to_dict() if self.params else None,
            'achieved': self.achieved.to_dict() if self.achieved else None,
            'rescale': list(self.rescale),
            'iterations': self.iterations,
            'status': self.status,
            't0': self.t0,
            'flags': list(self.flags),
        }


@dataclass
class RunConfig:
    """Validated run configuration."""

    problem: ProblemSpec
    seed: Optional[SeedParams] = None
    target: Optional[ConeSpec] = None
    target_fbar: Optional[tuple] = None
    options: TrajectoryOptions = field(default_factory=TrajectoryOptions)
    output_dir: Optional[str] = None
    stride: int = 1
    sweep_grid: Optional[list] = None
    shoot_tol: float = Config.SHOOT_TOL
    raw: dict = field(default_factory=dict)


@dataclass
class RunManifest:
    """Provenance of one run directory."""

    command: str
    config: dict
    version: str
    schema_version: int
    started_at: str
    finished_at: Optional[str] = None
    files: list = field(default_factory=list)
    status: str = 'running'
    exit_code: Optional[int] = None
    environment: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            'command': self.command,
            'config': self.config,
            'version': self.version,
            'schema_version': self.schema_version,
            'started_at': self.started_at,
            'finished_at': self.finished_at,
            'files': list(self.files),
            'status': self.status,
            'exit_code': self.exit_code,
            'environment': dict(self.environment),
        }
