"""Tail analysis of trajectory records.

Limits at the conical end are read off the last decade of t by linear least
squares in powers of 1/t, with Richardson elimination in h = L² as the
independent estimate. The quantities fitted are:

- σᵢ = lim Yᵢ/Xᵢ, modelled as a·exp(b/t²) with higher-order corrections
- (Xᵢ − (ε/2)L²)/L⁴ and 𝓡/L⁴, the refined second-order data
- (Z − 1)/X₁ and Y₁/L², used as cross-checks
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from conelab.errors import PreconditionError
from conelab.integrator import IntegratorConfig, integrate
from conelab.models import AsymptoticReport, ConeSpec, ProblemSpec, SState, TrajectoryRecord
from conelab.seed import early_window, extrapolate_to_orbit
from conelab.soliton import make_rhs

logger = logging.getLogger(__name__)

TAIL_DECADE = 10.0
MIN_TAIL_SAMPLES = 8
LOW_CONFIDENCE_RESIDUAL = 1e-6
# second-order tails lose digits to the cancellation X − (ε/2)L²
REFINED_RESIDUAL = 1e-4
# log(Y/X) has no 1/t term; the other tails do
SIGMA_POWERS = (0, 2, 3, 4)
TAIL_POWERS = (0, 1, 2, 3)


def tail_window(record: TrajectoryRecord, decade: float = TAIL_DECADE) -> np.ndarray:
    """Boolean mask of the samples with t ≥ t_end/decade."""
    t = record.t
    mask = t >= t[-1] / decade
    if int(mask.sum()) < MIN_TAIL_SAMPLES:
        mask = np.zeros_like(t, dtype=bool)
        mask[-min(MIN_TAIL_SAMPLES, len(t)):] = True
    return mask


def tail_limit(t: np.ndarray, values: np.ndarray, powers=TAIL_POWERS) -> tuple:
    """Fit values ≈ Σ cₚ (1/t)ᵖ and return (c₀, RMS residual)."""
    x = 1.0 / t
    xs = x / float(np.max(x))
    powers = tuple(powers)[:max(1, len(t) - 1)]
    design = np.column_stack([xs ** p for p in powers])
    coeffs, *_ = np.linalg.lstsq(design, values, rcond=None)
    resid = values - design @ coeffs
    rms = float(np.sqrt(np.mean(resid * resid)))
    return float(coeffs[0]), rms


def richardson(h: np.ndarray, values: np.ndarray, k0: int, k1: int) -> float:
    """First-order elimination of the h-linear error between samples k0 and k1."""
    h0, h1 = float(h[k0]), float(h[k1])
    if h0 == h1:
        return float(values[k1])
    return float((h0 * values[k1] - h1 * values[k0]) / (h0 - h1))


def _exp_tail(w, a, b):
    return a * np.exp(b * w)


def _curve_fit_sigma(t: np.ndarray, ratio: np.ndarray) -> float:
    if len(t) < MIN_TAIL_SAMPLES:
        return math.nan
    w = 1.0 / (t * t)
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', OptimizeWarning)
        try:
            popt, _ = curve_fit(_exp_tail, w, ratio, p0=(float(ratio[-1]), 0.0), maxfev=2000)
        except (RuntimeError, ValueError, TypeError) as exc:
            logger.debug('curve_fit cross-check failed: %s', exc)
            return math.nan
    return float(popt[0])


def _require_tail(record: TrajectoryRecord, decade: float) -> None:
    if record.event.kind != 'component-floor':
        raise PreconditionError(
            f'Tail extraction needs a record ending on the L-floor, got {record.event.kind}',
            {'event': record.event.to_dict()},
        )
    t = record.t
    n_tail = int(np.count_nonzero(t >= t[-1] / decade))
    if n_tail < MIN_TAIL_SAMPLES or int(np.argmax(record.L)) == len(record) - 1:
        raise PreconditionError(
            f'Tail too short for extraction: {n_tail} samples in the last decade of t',
            {'samples': len(record), 'tail_samples': n_tail},
        )


def _einstein_report(record: TrajectoryRecord) -> AsymptoticReport:
    spec = record.spec
    r = spec.r
    with np.errstate(divide='ignore', invalid='ignore'):
        terminal = record.Y[-1] / record.X[-1]
    cone = ConeSpec.for_problem(spec, [0.0] * r)
    return AsymptoticReport(
        sigma=[0.0] * r,
        sigma_uncertainty=[float(abs(v)) for v in terminal],
        sigma_divergent=[True] * r,
        refined=[math.nan] * r,
        refined_uncertainty=[math.nan] * r,
        scal_limit=math.nan,
        scal_uncertainty=math.nan,
        cone_scal_coeff=cone.cone_scal_coeff,
        flags=['einstein trajectory: X/Y diverges, no conical end'],
        fit={
            'terminal_ratio': [float(v) for v in terminal],
            'x_terminal': [float(v) for v in record.X[-1]],
            'half_eps_l2_terminal': float(0.5 * spec.eps * record.L[-1] ** 2),
        },
    )


def extract_sigma(record: TrajectoryRecord, decade: float = TAIL_DECADE) -> AsymptoticReport:
    """Extract σᵢ, the refined limits and the scalar curvature limit.

    Args:
        record: Trajectory record; regular records should reach the L-floor
        decade: Tail window is t ∈ [t_end/decade, t_end]

    Returns:
        AsymptoticReport; low_confidence is set when any tail fit leaves an
        RMS residual above LOW_CONFIDENCE_RESIDUAL

    Raises:
        SpecError: d₁ < 2 or a negative μᵢ on a regular record
        PreconditionError: the record did not end on the L-floor or its last
            decade of t holds fewer than MIN_TAIL_SAMPLES samples
    """
    spec = record.spec
    if record.classification == 'einstein':
        return _einstein_report(record)
    spec.require_conical()
    _require_tail(record, decade)

    r = spec.r
    eps = spec.eps
    d = spec.d_array
    mask = tail_window(record, decade)
    t = record.t[mask]
    L = record.L[mask]
    X = record.X[mask]
    Y = record.Y[mask]
    h = L * L
    k0, k1 = 0, len(t) - 1
    flags = []
    worst = 0.0

    sigma, sigma_unc, divergent, raw_sigma, rich_sigma = [], [], [], [], []
    for i in range(r):
        with np.errstate(divide='ignore', invalid='ignore'):
            ratio = Y[:, i] / X[:, i]
        if not np.all(np.isfinite(ratio) & (ratio > 0)):
            sigma.append(0.0)
            sigma_unc.append(math.nan)
            divergent.append(True)
            raw_sigma.append(math.nan)
            rich_sigma.append(math.nan)
            flags.append(f'sigma{i + 1}: Y/X not positive on the tail')
            continue
        log_limit, rms = tail_limit(t, np.log(ratio), SIGMA_POWERS)
        worst = max(worst, rms)
        fitted = math.exp(log_limit)
        raw = float(ratio[-1])
        rich = richardson(h, ratio, k0, k1)
        estimates = (raw, fitted, rich)
        sigma.append(fitted)
        sigma_unc.append(max(estimates) - min(estimates))
        divergent.append(not (math.isfinite(fitted) and fitted > 0))
        raw_sigma.append(raw)
        rich_sigma.append(rich)

    q = 0.5 * eps * h
    L4 = h * h
    unit = (0.5 * eps) ** 2
    second_order = 0.0
    refined, refined_unc = [], []
    for i in range(r):
        values = (X[:, i] - q) / L4
        limit, rms = tail_limit(t, values)
        second_order = max(second_order, rms / max(abs(limit), unit))
        refined.append(limit)
        refined_unc.append(abs(float(values[-1]) - limit))

    xl = X / h[:, None]
    yl = Y / h[:, None]
    refined_tail = (X - q[:, None]) / L4[:, None]
    scal_values = (2.0 * refined_tail @ d - (xl * xl) @ d - (xl @ d) ** 2
                   - (yl * yl) @ (d * spec.mu_array))
    scal_limit, scal_rms = tail_limit(t, scal_values)
    second_order = max(second_order, scal_rms / max(abs(scal_limit), unit))

    with np.errstate(divide='ignore', invalid='ignore'):
        z_values = (record.z[mask] - 1.0) / X[:, 0]
    z_limit = tail_limit(t, z_values)[0] if np.all(np.isfinite(z_values)) else math.nan
    y1_l2_limit = tail_limit(t, yl[:, 0])[0]

    early = early_window(record)
    r0 = extrapolate_to_orbit(record.t[early], record.scalar_curvature[early])
    r0_expected = -record.params.C - (spec.n + 1) * eps / 2

    cone = ConeSpec.for_problem(spec, sigma)
    low_confidence = worst > LOW_CONFIDENCE_RESIDUAL or second_order > REFINED_RESIDUAL
    if low_confidence:
        flags.append(f'low confidence: tail fit residual {worst:.3g} (sigma), '
                     f'{second_order:.3g} (second order)')
    if any(divergent):
        flags.append('sigma: non-positive limit extracted')

    report = AsymptoticReport(
        sigma=sigma,
        sigma_uncertainty=sigma_unc,
        sigma_divergent=divergent,
        refined=refined,
        refined_uncertainty=refined_unc,
        scal_limit=scal_limit,
        scal_uncertainty=abs(float(scal_values[-1]) - scal_limit),
        cone_scal_coeff=cone.cone_scal_coeff,
        low_confidence=low_confidence,
        flags=flags,
        fit={
            'window': [float(t[0]), float(t[-1])],
            'samples': int(len(t)),
            'residual': worst,
            'second_order_residual': second_order,
            'sigma_raw': raw_sigma,
            'sigma_richardson': rich_sigma,
            'sigma1_curve_fit': _curve_fit_sigma(t, Y[:, 0] / X[:, 0]) if not divergent[0]
            else math.nan,
            'z_limit': z_limit,
            'y1_over_l2_limit': y1_l2_limit,
            'y1_over_l2_expected': 0.5 * eps * sigma[0],
            'r0': r0,
            'r0_expected': r0_expected,
        },
    )
    logger.debug('Extracted sigma=%s (uncertainty %s) for C=%.6g', sigma, sigma_unc,
                 record.params.C)
    return report


@dataclass
class ExpanderReport:
    """Expander end asymptotics: (ε/2)Lt → 1, Xᵢ/L² → ε/2, Yᵢ/L → 0."""

    lt_terminal: float
    lt_limit: float
    x_ratio_terminal: list
    x_ratio_limit: list
    y_over_l_seed: list
    y_over_l_final: list
    y_over_l_drop: list
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            'lt_terminal': self.lt_terminal,
            'lt_limit': self.lt_limit,
            'x_ratio_terminal': list(self.x_ratio_terminal),
            'x_ratio_limit': list(self.x_ratio_limit),
            'y_over_l_drop': list(self.y_over_l_drop),
            'tolerance': self.tolerance,
            'passed': self.passed,
        }


def expander_asymptotics_check(record: TrajectoryRecord, tol: float = 1e-3,
                               min_drop: float = 10.0) -> ExpanderReport:
    """Check the expander end of a regular record on extrapolated limits."""
    if record.classification != 'regular':
        raise PreconditionError('Expander asymptotics need a regular record',
                                {'classification': record.classification})
    spec = record.spec
    eps = spec.eps
    mask = tail_window(record)
    L = record.L[mask]
    t = record.t[mask]

    # (ε/2)Lt − 1 is O(L): fit in powers of L, not 1/t²
    lt = 0.5 * eps * L * t
    ls = L / float(np.max(L))
    design = np.column_stack([np.ones_like(ls), ls, ls * ls])
    coeffs, *_ = np.linalg.lstsq(design, lt, rcond=None)
    lt_limit = float(coeffs[0])

    x_ratio = record.X[mask] / (L * L)[:, None] * (2.0 / eps)
    x_limits = [tail_limit(t, x_ratio[:, i])[0] for i in range(spec.r)]

    y_over_l = record.Y / record.L[:, None]
    seed_vals = y_over_l[0]
    final_vals = y_over_l[-1]
    drops = [float(a / b) if b > 0 else math.inf for a, b in zip(seed_vals, final_vals)]

    passed = (abs(lt_limit - 1.0) <= tol
              and all(abs(x - 1.0) <= tol for x in x_limits)
              and all(drop >= min_drop for drop in drops))
    return ExpanderReport(
        lt_terminal=float(lt[-1]),
        lt_limit=lt_limit,
        x_ratio_terminal=[float(v) for v in x_ratio[-1]],
        x_ratio_limit=x_limits,
        y_over_l_seed=[float(v) for v in seed_vals],
        y_over_l_final=[float(v) for v in final_vals],
        y_over_l_drop=drops,
        tolerance=tol,
        passed=passed,
    )


@dataclass
class ComparisonResult:
    limit: float
    expected: float
    error: float
    passed: bool


def comparison_lemma_harness(
    c1: Callable[[float], float],
    c2: Callable[[float], float],
    f0: float,
    c1_limit: Optional[float] = None,
    c2_limit: Optional[float] = None,
    horizon: float = 60.0,
    tol: float = 1e-8,
    config: Optional[IntegratorConfig] = None,
) -> ComparisonResult:
    """Integrate f′ = −c₁(s)f + c₂(s) and compare f(horizon) with c₂*/c₁*.

    Limits default to c₁(horizon), c₂(horizon).

    Raises:
        PreconditionError: c₁* or c₂* is not positive
    """
    c1_star = c1(horizon) if c1_limit is None else c1_limit
    c2_star = c2(horizon) if c2_limit is None else c2_limit
    if not (c1_star > 0 and c2_star > 0):
        raise PreconditionError('Comparison lemma needs positive limits',
                                {'c1_limit': c1_star, 'c2_limit': c2_star})

    def rhs(s, y):
        return np.array([-c1(s) * y[0] + c2(s)])

    traj = integrate(rhs, [f0], horizon, config or IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14))
    limit = float(traj.final[0])
    expected = c2_star / c1_star
    error = abs(limit - expected)
    return ComparisonResult(limit=limit, expected=expected, error=error,
                            passed=error <= tol * max(1.0, abs(expected)))


@dataclass
class OriginAttractionReport:
    """Lyapunov trace V = ΣYᵢ² + (ε/2)L² along a small trajectory."""

    s: np.ndarray
    v: np.ndarray
    v_monotone: bool
    v_initial: float
    v_final: float
    x_initial: float
    x_final: float
    event: str

    @property
    def passed(self) -> bool:
        return self.v_monotone and self.v_final < self.v_initial and self.x_final < self.x_initial


def center_manifold_state(spec: ProblemSpec, rng: np.random.Generator,
                          scale: float = 1e-2) -> SState:
    """Random small state on the center manifold Xᵢ = μᵢYᵢ² + (ε/2)L²."""
    L = scale * float(rng.uniform(0.5, 1.0))
    Y = scale * rng.uniform(0.5, 1.0, spec.r)
    X = spec.mu_array * Y * Y + 0.5 * spec.eps * L * L
    return SState(L=L, X=X, Y=Y)


def origin_attraction_check(spec: ProblemSpec, state0: SState, horizon: float = 1000.0,
                            config: Optional[IntegratorConfig] = None) -> OriginAttractionReport:
    """Integrate from a small state and trace the Lyapunov function.

    Raises:
        PreconditionError: some μᵢ < 0, or the state has L ≤ 0 or Yᵢ ≤ 0
    """
    if any(m < 0 for m in spec.mu):
        raise PreconditionError('Origin attraction needs mu_i >= 0', {'mu': list(spec.mu)})
    if not (state0.L > 0 and np.all(state0.Y > 0)):
        raise PreconditionError('Origin attraction needs L > 0 and Y_i > 0')

    traj = integrate(make_rhs(spec), state0.to_vector(), horizon, config)
    r = spec.r
    L = traj.y[:, 0]
    X = traj.y[:, 1:1 + r]
    Y = traj.y[:, 1 + r:1 + 2 * r]
    v = np.sum(Y * Y, axis=1) + 0.5 * spec.eps * L * L
    x_norm = np.linalg.norm(X, axis=1)
    return OriginAttractionReport(
        s=traj.s,
        v=v,
        v_monotone=bool(np.all(np.diff(v) < 0)),
        v_initial=float(v[0]),
        v_final=float(v[-1]),
        x_initial=float(x_norm[0]),
        x_final=float(x_norm[-1]),
        event=traj.event.kind,
    )


@dataclass
class QuotientTrapReport:
    """First entries into the two monotonicity traps of Y₁/X₁."""

    target: float
    upper: float
    lower: float
    certified_above: bool
    above_index: Optional[int] = None
    above_s: Optional[float] = None
    certified_below: bool = False
    below_index: Optional[int] = None
    below_s: Optional[float] = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            'target': self.target,
            'upper': self.upper,
            'lower': self.lower,
            'certified_above': self.certified_above,
            'above_s': self.above_s,
            'certified_below': self.certified_below,
            'below_s': self.below_s,
        }


def quotient_trap_check(record: TrajectoryRecord, target: float) -> QuotientTrapReport:
    """Certify σ₁ > target or σ₁ < target from a trap entry of Y₁/X₁.

    (Y₁/X₁)′ = (Y₁/X₁)(1 − X₁ − Z). Once Y₁/X₁ exceeds max(target, √((n−1)/(d₁−1)))
    with 1 − X₁ − Z > 0 it never decreases again; once it drops below
    min(target, 1) with 1 − X₁ − Z < 0 it never increases again.

    Raises:
        PreconditionError: d₁ < 2 or target not positive
    """
    spec = record.spec
    d1 = spec.d[0]
    if d1 < 2:
        raise PreconditionError('Quotient traps need d[0] >= 2', {'d': list(spec.d)})
    if not target > 0:
        raise PreconditionError(f'target must be positive, got {target}')

    upper = max(target, math.sqrt((spec.n - 1) / (d1 - 1)))
    lower = min(target, 1.0)
    x1 = record.X[:, 0]
    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = record.Y[:, 0] / x1
        growth = 1.0 - x1 - record.z
    valid = np.isfinite(ratio) & np.isfinite(growth) & (x1 > 0)

    above = np.flatnonzero(valid & (ratio > upper) & (growth > 0))
    below = np.flatnonzero(valid & (ratio < lower) & (growth < 0))
    report = QuotientTrapReport(target=target, upper=upper, lower=lower,
                                certified_above=bool(above.size),
                                certified_below=bool(below.size))
    if above.size:
        report.above_index = int(above[0])
        report.above_s = float(record.s[above[0]])
    if below.size:
        report.below_index = int(below[0])
        report.below_s = float(record.s[below[0]])
    if report.certified_above and report.certified_below:
        # both traps cannot be entered by one trajectory
        report.notes.append('both traps entered; numerical inconsistency')
        logger.error('Quotient traps both entered for C=%.6g', record.params.C)
    return report
