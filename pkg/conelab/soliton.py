"""Soliton ODE in arc-length and desingularized coordinates.

With H = −u̇ + tr L the desingularized variables are L = 1/H,
Xᵢ = L ḟᵢ/fᵢ and Yᵢ = L/fᵢ. In the new variable s (d/ds = L d/dt)
the flow is polynomial:

    L'  = L (ΣdⱼXⱼ² − (ε/2)L²)
    Xᵢ' = Xᵢ (ΣdⱼXⱼ² − (ε/2)L² − 1) + μᵢYᵢ² + (ε/2)L²
    Yᵢ' = Yᵢ (ΣdⱼXⱼ² − (ε/2)L² − Xᵢ)
    t'  = L
    u'  = ΣdᵢXᵢ − 1

The conservation law ü + H u̇ = C + εu becomes S₁ = (C + εu)L², S₂ = u̇L.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from conelab.errors import ConversionError, DomainError, StateValidationError
from conelab.models import Diagnostics, ProblemSpec, SState, TState

logger = logging.getLogger(__name__)


def make_rhs(spec: ProblemSpec):
    """Build the flat-vector right-hand side rhs(s, y) for the integrator."""
    r = spec.r
    d = spec.d_array
    mu = spec.mu_array
    half_eps = 0.5 * spec.eps

    def rhs(s, y):
        L = y[0]
        X = y[1:1 + r]
        Y = y[1 + r:1 + 2 * r]
        q = half_eps * L * L
        a = float(d @ (X * X)) - q
        dy = np.empty_like(y)
        dy[0] = L * a
        dy[1:1 + r] = X * (a - 1.0) + mu * Y * Y + q
        dy[1 + r:1 + 2 * r] = Y * (a - X)
        dy[-2] = L
        dy[-1] = float(d @ X) - 1.0
        return dy

    return rhs


def _check_finite(vec: np.ndarray) -> None:
    if not np.all(np.isfinite(vec)):
        raise StateValidationError('State contains non-finite components',
                                   {'state': [float(v) for v in vec]})


def rhs_s(spec: ProblemSpec, state: SState) -> SState:
    """Derivative of an s-state, returned in SState layout.

    Raises:
        StateValidationError: Non-finite input
    """
    vec = state.to_vector()
    _check_finite(vec)
    return SState.from_vector(make_rhs(spec)(0.0, vec), spec.r)


def rhs_t(spec: ProblemSpec, C: float, state: TState) -> TState:
    """Derivative of (f, ḟ, u, u̇) in arc-length t.

    Uses f̈ᵢ = −Hḟᵢ + μᵢ/fᵢ + (ε/2)fᵢ + ḟᵢ²/fᵢ and ü = C + εu − Hu̇.

    Raises:
        DomainError: Some fᵢ ≤ 0
    """
    f = np.asarray(state.f, dtype=float)
    fdot = np.asarray(state.fdot, dtype=float)
    if np.any(f <= 0):
        raise DomainError(f'Warping functions must be positive, got f={f.tolist()}')
    H = -state.udot + float(spec.d_array @ (fdot / f))
    fddot = -H * fdot + spec.mu_array / f + 0.5 * spec.eps * f + fdot * fdot / f
    uddot = C + spec.eps * state.u - H * state.udot
    return TState(t=1.0, f=fdot.copy(), fdot=fddot, u=state.udot, udot=uddot)


def t_to_s(spec: ProblemSpec, C: float, tstate: TState) -> SState:
    """Desingularize a t-state.

    Raises:
        ConversionError: −u̇ + tr L ≤ 0
    """
    f = np.asarray(tstate.f, dtype=float)
    fdot = np.asarray(tstate.fdot, dtype=float)
    if np.any(f <= 0):
        raise DomainError(f'Warping functions must be positive, got f={f.tolist()}')
    denom = -tstate.udot + float(spec.d_array @ (fdot / f))
    if not denom > 0:
        raise ConversionError(
            f'-udot + tr L must be positive to desingularize, got {denom:.6g} at t={tstate.t}'
        )
    L = 1.0 / denom
    return SState(L=L, X=L * fdot / f, Y=L / f, t=tstate.t, u=tstate.u)


def s_to_t(spec: ProblemSpec, state: SState) -> TState:
    """Reconstruct fᵢ = L/Yᵢ, ḟᵢ = Xᵢ/Yᵢ and u̇ = S₂/L.

    Raises:
        ConversionError: L ≤ 0 or some Yᵢ ≤ 0
    """
    Y = np.asarray(state.Y, dtype=float)
    if not state.L > 0 or np.any(Y <= 0):
        raise ConversionError('Reconstruction needs L > 0 and Y > 0')
    s2 = float(spec.d_array @ state.X) - 1.0
    return TState(t=state.t, f=state.L / Y, fdot=np.asarray(state.X) / Y,
                  u=state.u, udot=s2 / state.L)


def diagnostics_table(spec: ProblemSpec, C: float, states: np.ndarray) -> dict:
    """Vectorized S₁, S₂, 𝓡, Z and conservation residual for rows of flat states.

    𝓡 is evaluated as 2ΣdX − ΣdX² − (ΣdX)² − ΣdμY² − nεL², which equals
    −(S₁ + S₂² + (n+1)(ε/2)L²) but keeps its accuracy when 𝓡 ≪ 1.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    r = spec.r
    d = spec.d_array
    dmu = d * spec.mu_array
    n = spec.n
    L = states[:, 0]
    X = states[:, 1:1 + r]
    Y = states[:, 1 + r:1 + 2 * r]
    u = states[:, -1]
    q = 0.5 * spec.eps * L * L
    sdx = X @ d
    sdx2 = (X * X) @ d
    sdmy2 = (Y * Y) @ dmu
    s1 = sdx2 + sdmy2 + (n - 1) * q - 1.0
    s2 = sdx - 1.0
    rcal = 2.0 * sdx - sdx2 - sdx * sdx - sdmy2 - 2.0 * n * q
    x1 = X[:, 0]
    with np.errstate(divide='ignore', invalid='ignore'):
        z = np.where(x1 > 0, ((spec.d[0] - 1) * Y[:, 0] ** 2 + q) / x1, np.nan)
    residual = np.abs(s1 - (C + spec.eps * u) * L * L)
    return {'s1': s1, 's2': s2, 'rcal': rcal, 'z': z, 'residual': residual}


def diagnostics(spec: ProblemSpec, C: float, state: SState) -> Diagnostics:
    """Derived scalars S₁, S₂, 𝓡, Z and the conservation residual at one state."""
    vec = state.to_vector()
    _check_finite(vec)
    table = diagnostics_table(spec, C, vec)
    return Diagnostics(
        s1=float(table['s1'][0]),
        s2=float(table['s2'][0]),
        rcal=float(table['rcal'][0]),
        z=float(table['z'][0]),
        conservation_residual=float(table['residual'][0]),
        inequality_flags=inequality_flags(spec, state),
    )


def inequality_flags(spec: ProblemSpec, state: SState) -> tuple:
    """(X₁ > Xᵢ for i ≥ 2, X₁ > ΣdⱼXⱼ², X₁ > (ε/2)L²) at one state."""
    X = np.asarray(state.X, dtype=float)
    q = 0.5 * spec.eps * state.L ** 2
    return (
        bool(np.all(X[0] > X[1:])),
        bool(X[0] > float(spec.d_array @ (X * X))),
        bool(X[0] > q),
    )


def scalar_curvature_t(spec: ProblemSpec, C: float, tstate: TState) -> tuple:
    """Scalar curvature of a t-state by two closed forms.

    Returns:
        (R from the conservation law, R from the curvature of the warped product);
        they agree on solutions.
    """
    f = np.asarray(tstate.f, dtype=float)
    shape = np.asarray(tstate.fdot, dtype=float) / f
    d = spec.d_array
    n = spec.n
    eps = spec.eps
    tr_r = float((d * spec.mu_array) @ (1.0 / (f * f)))
    tr_l = float(d @ shape)
    tr_l2 = float(d @ (shape * shape))
    r_law = -C - eps * tstate.u - tstate.udot ** 2 - (n + 1) * eps / 2
    r_geom = -tr_r - tr_l2 + tr_l ** 2 - 2.0 * (tstate.udot * tr_l + n * eps / 2)
    return r_law, r_geom


def conservation_residual_t(spec: ProblemSpec, C: float, tstate: TState) -> float:
    """|tr L² + tr r + (n−1)ε/2 − (−u̇ + tr L)² − C − εu|."""
    f = np.asarray(tstate.f, dtype=float)
    shape = np.asarray(tstate.fdot, dtype=float) / f
    d = spec.d_array
    tr_r = float((d * spec.mu_array) @ (1.0 / (f * f)))
    tr_l = float(d @ shape)
    tr_l2 = float(d @ (shape * shape))
    H = -tstate.udot + tr_l
    return abs(tr_l2 + tr_r + (spec.n - 1) * spec.eps / 2 - H * H - C - spec.eps * tstate.u)


@dataclass(frozen=True)
class IdentityResiduals:
    """Residuals of the derivative identities at one state.

    Identities with a quotient are checked with denominators cleared:
    L²·[(Yᵢ/L)' + (Yᵢ/L)Xᵢ], X₁²·[(Y₁/X₁)' − (Y₁/X₁)(1 − X₁ − Z)] and
    L²·[(S₁/L²)' − εS₂]. They are NaN when L = 0 or X₁ = 0 respectively.
    """

    s1: float
    s2: float
    rcal: float
    y_over_l: tuple
    quotient: float
    s1_over_l2: float

    def max_residual(self) -> float:
        values = [self.s1, self.s2, self.rcal, self.quotient, self.s1_over_l2, *self.y_over_l]
        finite = [abs(v) for v in values if math.isfinite(v)]
        return max(finite) if finite else 0.0


def derivative_identities_check(spec: ProblemSpec, state: SState) -> IdentityResiduals:
    """Compare chain-rule derivatives of S₁, S₂, 𝓡, Yᵢ/L, Y₁/X₁ with their closed forms.

    These are algebraic identities of the vector field, so the residuals vanish
    to round-off at any state, on a trajectory or not.
    """
    vec = state.to_vector()
    _check_finite(vec)
    r = spec.r
    d = spec.d_array
    mu = spec.mu_array
    dmu = d * mu
    n = spec.n
    eps = spec.eps
    dv = make_rhs(spec)(0.0, vec)
    L = vec[0]
    X = vec[1:1 + r]
    Y = vec[1 + r:1 + 2 * r]
    dL = dv[0]
    dX = dv[1:1 + r]
    dY = dv[1 + r:1 + 2 * r]

    q = 0.5 * eps * L * L
    a = float(d @ (X * X)) - q
    sdx = float(d @ X)
    s1 = float(d @ (X * X)) + float(dmu @ (Y * Y)) + (n - 1) * q - 1.0
    s2 = sdx - 1.0
    rcal = -(s1 + s2 * s2 + (n + 1) * q)

    ds1 = 2.0 * float(d @ (X * dX)) + 2.0 * float(dmu @ (Y * dY)) + (n - 1) * eps * L * dL
    ds2 = float(d @ dX)
    drcal = (2.0 * ds2 - 2.0 * float(d @ (X * dX)) - 2.0 * sdx * ds2
             - 2.0 * float(dmu @ (Y * dY)) - 2.0 * n * eps * L * dL)

    res_s1 = ds1 - 2.0 * (a * s1 + q * s2)
    res_s2 = ds2 - (s1 + (a - 1.0) * s2)
    res_rcal = drcal - 2.0 * (a * rcal + (s2 - s1 - q) * s2)
    res_s1_l2 = ds1 - 2.0 * s1 * a - eps * s2 * L * L if L != 0 else float('nan')

    if L != 0:
        # L²·(Y/L)' = Y'L − YL'
        y_over_l = tuple(float(dY[i] * L - Y[i] * dL + Y[i] * L * X[i]) for i in range(r))
    else:
        y_over_l = tuple(float('nan') for _ in range(r))

    if X[0] != 0:
        z = ((spec.d[0] - 1) * Y[0] ** 2 + q) / X[0]
        quotient = float(dY[0] * X[0] - Y[0] * dX[0] - Y[0] * X[0] * (1.0 - X[0] - z))
    else:
        quotient = float('nan')

    return IdentityResiduals(
        s1=float(res_s1),
        s2=float(res_s2),
        rcal=float(res_rcal),
        y_over_l=y_over_l,
        quotient=quotient,
        s1_over_l2=float(res_s1_l2),
    )


def stationary_point(spec: ProblemSpec) -> SState:
    """Fixed point (0, 1/d₁, 0…, 1/d₁, 0…) from which every trajectory emanates."""
    r = spec.r
    X = np.zeros(r)
    Y = np.zeros(r)
    X[0] = Y[0] = 1.0 / spec.d[0]
    return SState(L=0.0, X=X, Y=Y)


def make_einstein_projection(spec: ProblemSpec):
    """Build a map back onto S₁ = S₂ = 0 for Einstein (C = 0) runs.

    X is shifted along (1, …, 1) to restore ΣdX = 1, then L is solved from
    S₁ = 0. Near the Einstein fixed point this locus is transversally
    unstable, so round-off would otherwise carry the flow away from it.
    """
    r = spec.r
    d = spec.d_array
    dmu = d * spec.mu_array
    n = spec.n
    eps = spec.eps

    def project(y):
        y = y.copy()
        X = y[1:1 + r]
        Y = y[1 + r:1 + 2 * r]
        X += (1.0 - float(d @ X)) / n
        rest = 1.0 - float(d @ (X * X)) - float(dmu @ (Y * Y))
        if rest > 0 and y[0] > 0:
            y[0] = math.sqrt(2.0 * rest / ((n - 1) * eps))
        y[1:1 + r] = X
        y[-1] = 0.0
        return y

    return project


def einstein_projection(spec: ProblemSpec, state: SState) -> SState:
    """Project a single state onto S₁ = S₂ = 0 (see make_einstein_projection)."""
    vec = state.to_vector()
    _check_finite(vec)
    return SState.from_vector(make_einstein_projection(spec)(vec), spec.r)
