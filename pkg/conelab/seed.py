"""Seeding trajectories off the singular orbit.

At t = 0 the sphere factor collapses: f₁(0) = 0, ḟ₁(0) = 1, fᵢ(0) = f̄ᵢ,
ḟᵢ(0) = 0 and u(0) = u̇(0) = 0 with ü(0) = C/(d₁+1). The IVP is singular
there, so integration starts from a short Taylor expansion at a small t0:

    f₁ = t + a₃t³
    fᵢ = f̄ᵢ(1 + bᵢt²),  bᵢ = F̄ᵢ/(2(d₁+1)),  F̄ᵢ = μᵢ/f̄ᵢ² + ε/2
    u  = Ct²/(2(d₁+1))

with a₃ = (C/(d₁+1) + ε/2 − 2Σ_{i≥2} dᵢbᵢ)/(6d₁) from matching the O(t)
terms of the f₁ equation.
"""

import logging
import math
from typing import Optional

import numpy as np

from conelab.errors import SeedError
from conelab.models import ProblemSpec, SeedParams, SeedResult, TState, TrajectoryRecord
from conelab.soliton import diagnostics, t_to_s

logger = logging.getLogger(__name__)

SEED_ORDERS = (2, 3)


def forcing_terms(spec: ProblemSpec, params: SeedParams) -> np.ndarray:
    """F̄ᵢ = μᵢ/f̄ᵢ² + ε/2 for i ≥ 2."""
    fbar = np.asarray(params.fbar, dtype=float)
    return spec.mu_array[1:] / (fbar * fbar) + 0.5 * spec.eps


def validate_seed_regime(spec: ProblemSpec, params: SeedParams) -> tuple:
    """Classify seed parameters.

    Returns:
        (classification, reason) where classification is 'regular', 'einstein'
        or 'rejected' and reason explains a rejection (None otherwise)
    """
    if len(params.fbar) != spec.r - 1:
        return 'rejected', f'expected {spec.r - 1} values of fbar, got {len(params.fbar)}'
    if not all(math.isfinite(x) and x > 0 for x in params.fbar):
        return 'rejected', 'fbar values must be positive and finite'
    if not math.isfinite(params.C):
        return 'rejected', 'C must be finite'
    forcing = forcing_terms(spec, params)
    bad = [i + 2 for i, value in enumerate(forcing) if not value > 0]
    if bad:
        return 'rejected', (
            f'F_i = mu_i/fbar_i^2 + eps/2 must be positive; fails for factors {bad}'
        )
    if params.C > 0:
        return 'rejected', (
            'C > 0 is excluded: complete non-Einstein expanders satisfy R + (n+1)eps/2 > 0'
        )
    if params.C == 0:
        return 'einstein', None
    return 'regular', None


def default_t0(spec: ProblemSpec, params: SeedParams) -> float:
    """10⁻³ · min(1, f̄₂,…,f̄ᵣ, 1/√ε, 1/√|C|)."""
    scales = [1.0, *params.fbar, 1.0 / math.sqrt(spec.eps)]
    if params.C != 0:
        scales.append(1.0 / math.sqrt(abs(params.C)))
    return 1e-3 * min(scales)


def _project_conservation(spec: ProblemSpec, C: float, tstate: TState) -> tuple:
    """Re-solve ḟ₁ from the conservation law, keeping the root nearest the series value.

    With A = ḟ₁/f₁, m = Σ_{i≥2} dᵢḟᵢ/fᵢ − u̇ the law reads
    (d₁ − d₁²)A² − 2d₁mA − m² + K = 0.
    """
    d = spec.d_array
    d1 = spec.d[0]
    f = tstate.f
    shape = tstate.fdot / f
    rest = shape[1:]
    m = float(d[1:] @ rest) - tstate.udot
    tr_r = float((d * spec.mu_array) @ (1.0 / (f * f)))
    K = (float(d[1:] @ (rest * rest)) + tr_r + (spec.n - 1) * spec.eps / 2
         - C - spec.eps * tstate.u)
    qa = float(d1 - d1 * d1)
    qb = -2.0 * d1 * m
    qc = K - m * m
    guess = float(shape[0])

    if qa == 0.0:
        if qb == 0.0:
            return tstate, False
        root = -qc / qb
    else:
        disc = qb * qb - 4.0 * qa * qc
        if disc < 0:
            logger.warning('Conservation projection skipped: negative discriminant %.3g', disc)
            return tstate, False
        qq = -0.5 * (qb + math.copysign(math.sqrt(disc), qb))
        roots = [qq / qa]
        if qq != 0.0:
            roots.append(qc / qq)
        root = min(roots, key=lambda x: abs(x - guess))

    if not (math.isfinite(root) and root > 0):
        logger.warning('Conservation projection skipped: root %.6g not admissible', root)
        return tstate, False

    fdot = tstate.fdot.copy()
    fdot[0] = root * f[0]
    return TState(t=tstate.t, f=f.copy(), fdot=fdot, u=tstate.u, udot=tstate.udot), True


def taylor_seed(
    spec: ProblemSpec,
    params: SeedParams,
    t0: Optional[float] = None,
    order: int = 3,
    project: bool = True,
    max_error: Optional[float] = None,
) -> SeedResult:
    """Build the seed state at t0 from the singular-orbit data.

    Args:
        spec: Problem specification
        params: Seed parameters (f̄₂,…,f̄ᵣ, C)
        t0: Seed time (default :func:`default_t0`)
        order: 3 includes the matched cubic of f₁, 2 omits it
        project: Re-solve ḟ₁ so the conservation law holds to round-off
        max_error: Refuse seeds whose truncation estimate exceeds this

    Returns:
        SeedResult in both coordinate systems

    Raises:
        SeedError: Parameters outside the admissible regime, bad order,
            or t0 too large for max_error (details carry suggested_t0)
    """
    classification, reason = validate_seed_regime(spec, params)
    if classification == 'rejected':
        raise SeedError(f'Invalid seed: {reason}', {'params': params.to_dict()})
    if order not in SEED_ORDERS:
        raise SeedError(f'Taylor order must be one of {SEED_ORDERS}, got {order}')
    if t0 is None:
        t0 = default_t0(spec, params)
    if not (math.isfinite(t0) and t0 > 0):
        raise SeedError(f't0 must be positive, got {t0}')

    d1 = spec.d[0]
    C = params.C
    eps = spec.eps
    fbar = np.asarray(params.fbar, dtype=float)
    b = forcing_terms(spec, params) / (2.0 * (d1 + 1))
    a3 = (C / (d1 + 1) + eps / 2 - 2.0 * float(spec.d_array[1:] @ b)) / (6.0 * d1)

    # relative size of the first omitted term of each series
    kappa = max(6.0 * abs(a3), 2.0 * float(np.max(np.abs(b))), abs(C) / (d1 + 1), eps / 2)
    est_error = (kappa * t0 * t0) ** 2
    if order == 2:
        est_error = max(est_error, abs(a3) * t0 * t0)

    if max_error is not None and est_error > max_error:
        power = 4.0 if order == 3 else 2.0
        suggested = 0.9 * t0 * (max_error / est_error) ** (1.0 / power)
        raise SeedError(
            f't0={t0:.3g} too large: truncation estimate {est_error:.3g} exceeds {max_error:.3g}',
            {'suggested_t0': suggested, 'est_error': est_error},
        )

    cubic = a3 if order == 3 else 0.0
    f = np.concatenate(([t0 + cubic * t0 ** 3], fbar * (1.0 + b * t0 * t0)))
    fdot = np.concatenate(([1.0 + 3.0 * cubic * t0 * t0], 2.0 * fbar * b * t0))
    u = C * t0 * t0 / (2.0 * (d1 + 1))
    udot = C * t0 / (d1 + 1)
    tstate = TState(t=t0, f=f, fdot=fdot, u=u, udot=udot)

    projected = False
    if project:
        tstate, projected = _project_conservation(spec, C, tstate)

    sstate = t_to_s(spec, C, tstate)
    residual = diagnostics(spec, C, sstate).conservation_residual
    logger.debug('Seed at t0=%.3g (order %d, projected=%s): est_error=%.3g residual=%.3g',
                 t0, order, projected, est_error, residual)

    return SeedResult(
        t0=t0,
        tstate=tstate,
        sstate=sstate,
        order=order,
        est_error=est_error,
        residual=residual,
        projected=projected,
        a3=a3,
        b=tuple(float(x) for x in b),
    )


def early_window(record: TrajectoryRecord, factor: float = 20.0, minimum: int = 4) -> np.ndarray:
    t = record.t
    mask = t <= factor * t[0]
    if int(mask.sum()) < minimum:
        mask = np.zeros_like(t, dtype=bool)
        mask[:min(minimum, len(t))] = True
    return mask


def extrapolate_to_orbit(t: np.ndarray, values: np.ndarray) -> float:
    """Value at t = 0 of a polynomial fit in t² (even series near the singular orbit)."""
    w = t * t
    scale = float(np.max(w))
    deg = min(2, len(w) - 1)
    coeffs = np.polyfit(w / scale, values, deg)
    return float(coeffs[-1])


def recover_seed_params(spec: ProblemSpec, record: TrajectoryRecord) -> SeedParams:
    """Read (f̄₂,…,f̄ᵣ, C) back off the early samples of a trajectory.

    f̄ᵢ = lim (Yᵢ/L)⁻¹ and C = lim S₁/L² as s → −∞, both extrapolated to t = 0.
    """
    mask = early_window(record)
    t = record.t[mask]
    L = record.L[mask]
    Y = record.Y[mask]
    fbar = [extrapolate_to_orbit(t, L / Y[:, i]) for i in range(1, spec.r)]
    C = extrapolate_to_orbit(t, record.s1[mask] / (L * L))
    return SeedParams(fbar=tuple(fbar), C=C)
