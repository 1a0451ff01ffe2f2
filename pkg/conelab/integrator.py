"""Explicit Runge-Kutta integration of flat real-vector ODEs.

Two steppers share one driver: the embedded Dormand-Prince 5(4) pair with
PI step-size control, and fixed-step classic RK4 used as the independent
oracle. Right-hand sides have the signature ``rhs(s, y) -> dy``.

Terminal conditions are expressed as event detectors. A triggered event is
localized by bisecting the length of the last step and re-stepping from the
previous accepted state, so the reported state is an honest integration
result rather than an interpolant.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from conelab.config import Config
from conelab.errors import ConfigError, StateValidationError

logger = logging.getLogger(__name__)

# Dormand-Prince 5(4) tableau
DP_C = (0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0)
DP_A = (
    (),
    (1.0 / 5.0,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0),
    (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0),
)
DP_B = (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0)
DP_B_HAT = (5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0,
            -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0)
DP_E = tuple(b - bh for b, bh in zip(DP_B, DP_B_HAT))
DP_ORDER = 5

MODES = ('adaptive', 'fixed')
EVENT_KINDS = (
    'component-floor',
    'component-negative',
    's-horizon',
    't-horizon',
    'blowup',
    'stall',
    'converged',
)


@dataclass
class IntegratorConfig:
    """Tolerances and step limits for one integration."""

    rel_tol: float = Config.REL_TOL
    abs_tol: float = Config.ABS_TOL
    max_step: float = Config.MAX_STEP
    min_step: float = Config.MIN_STEP
    max_steps: int = Config.MAX_STEPS
    mode: str = Config.MODE
    fixed_step: float = Config.FIXED_STEP
    first_step: Optional[float] = None
    safety: float = 0.9
    event_tol: float = 1e-12
    blowup: float = 1e50

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """Raise ConfigError naming the offending field."""
        if self.mode not in MODES:
            raise ConfigError(f'mode must be one of {MODES}, got {self.mode!r}', 'integrator.mode')
        for name in ('rel_tol', 'abs_tol'):
            value = getattr(self, name)
            if not 1e-15 < value < 1e-2:
                raise ConfigError(f'{name} must lie in (1e-15, 1e-2), got {value}',
                                  f'integrator.{name}')
        if not 0 < self.min_step < self.max_step:
            raise ConfigError(
                f'need 0 < min_step < max_step, got {self.min_step}, {self.max_step}',
                'integrator.min_step',
            )
        if self.max_steps < 1:
            raise ConfigError('max_steps must be positive', 'integrator.max_steps')
        if not self.fixed_step > 0:
            raise ConfigError('fixed_step must be positive', 'integrator.fixed_step')

    def to_dict(self) -> dict:
        return {
            'rel_tol': self.rel_tol,
            'abs_tol': self.abs_tol,
            'max_step': self.max_step,
            'min_step': self.min_step,
            'max_steps': self.max_steps,
            'mode': self.mode,
            'fixed_step': self.fixed_step,
        }


@dataclass(frozen=True)
class Event:
    """Terminal condition reached by an integration."""

    kind: str
    s: float
    value: float
    index: Optional[int] = None

    def to_dict(self) -> dict:
        return {'kind': self.kind, 's': self.s, 'value': self.value, 'index': self.index}


class EventDetector:
    """Base class for terminal event detectors."""

    kind = 'event'
    index: Optional[int] = None

    def reset(self, s: float, y: np.ndarray) -> None:
        """Called with the initial state before integration starts."""

    def observe(self, s: float, y: np.ndarray) -> None:
        """Called with every accepted state that did not fire the event."""

    def triggered(self, s: float, y: np.ndarray) -> bool:
        raise NotImplementedError

    def value(self, s: float, y: np.ndarray) -> float:
        if self.index is None:
            return float(s)
        return float(y[self.index])


class ComponentFloor(EventDetector):
    """Fires when y[index] drops to or below ``floor`` on a descending stretch.

    The detector arms once the component has been above the floor or has
    started to decrease, so a state that starts below the floor and rises
    through it does not end the run.
    """

    kind = 'component-floor'

    def __init__(self, index: int, floor: float):
        self.index = index
        self.floor = floor
        self.armed = False
        self._last = math.nan

    def reset(self, s, y):
        self._last = float(y[self.index])
        self.armed = self._last > self.floor

    def observe(self, s, y):
        value = float(y[self.index])
        if value > self.floor or value < self._last:
            self.armed = True
        self._last = value

    def triggered(self, s, y):
        return self.armed and bool(y[self.index] <= self.floor)


class ComponentNegative(EventDetector):
    """Fires when y[index] becomes negative."""

    kind = 'component-negative'

    def __init__(self, index: int):
        self.index = index

    def triggered(self, s, y):
        return bool(y[self.index] < 0.0)


class ComponentCeiling(EventDetector):
    """Fires when y[index] reaches ``limit``; used for the carried t."""

    kind = 't-horizon'

    def __init__(self, index: int, limit: float):
        self.index = index
        self.limit = limit

    def triggered(self, s, y):
        return bool(y[self.index] >= self.limit)


class Converged(EventDetector):
    """Fires once ``predicate(s, y)`` holds."""

    kind = 'converged'

    def __init__(self, predicate: Callable[[float, np.ndarray], bool], index: Optional[int] = None):
        self.predicate = predicate
        self.index = index

    def triggered(self, s, y):
        return bool(self.predicate(s, y))


@dataclass(eq=False)
class Trajectory:
    """Samples produced by :func:`integrate`."""

    s: np.ndarray
    y: np.ndarray
    event: Event
    n_steps: int
    n_rejected: int
    n_rhs: int

    @property
    def final(self) -> np.ndarray:
        return self.y[-1]


def dormand_prince_step(rhs, s: float, y: np.ndarray, h: float,
                        k1: Optional[np.ndarray] = None) -> tuple:
    """Take one Dormand-Prince 5(4) step.

    Args:
        rhs: Right-hand side rhs(s, y)
        s: Current independent variable
        y: Current state
        h: Step length
        k1: rhs(s, y) if already known (first-same-as-last reuse)

    Returns:
        (y_new, error_vector, k7) where k7 = rhs(s + h, y_new)
    """
    if k1 is None:
        k1 = rhs(s, y)
    ks = [k1]
    for i in range(1, 7):
        incr = sum(a * k for a, k in zip(DP_A[i], ks) if a != 0.0)
        ks.append(rhs(s + DP_C[i] * h, y + h * incr))
    # row 7 of A equals B, so the last stage is evaluated at y_new
    y_new = y + h * sum(b * k for b, k in zip(DP_B, ks) if b != 0.0)
    err = h * sum(e * k for e, k in zip(DP_E, ks))
    return y_new, err, ks[6]


def rk4_step(rhs, s: float, y: np.ndarray, h: float) -> np.ndarray:
    """Take one classic fourth-order Runge-Kutta step."""
    k1 = rhs(s, y)
    k2 = rhs(s + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(s + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(s + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rms(v: np.ndarray) -> float:
    return float(np.sqrt(np.mean(v * v)))


def _initial_step(rhs, s0, y0, f0, cfg: IntegratorConfig) -> float:
    if cfg.first_step is not None:
        return min(cfg.first_step, cfg.max_step)
    scale = cfg.abs_tol + cfg.rel_tol * np.abs(y0)
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    f1 = rhs(s0 + h0, y0 + h0 * f0)
    d2 = _rms((f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / DP_ORDER)
    return max(min(100.0 * h0, h1, cfg.max_step), cfg.min_step)


def integrate(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0,
    horizon: float,
    config: Optional[IntegratorConfig] = None,
    events: Sequence[EventDetector] = (),
    s0: float = 0.0,
    output_grid=None,
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Trajectory:
    """Integrate y' = rhs(s, y) from s0 over ``horizon``.

    Every accepted step is sampled. Points of ``output_grid`` are hit
    exactly by shortening the step that would pass them.

    Args:
        rhs: Right-hand side rhs(s, y)
        y0: Initial state
        horizon: Length of the s-interval (may be math.inf when an event ends the run)
        config: Integrator settings (defaults to IntegratorConfig())
        events: Terminal event detectors
        s0: Initial value of the independent variable
        output_grid: Extra s-values to land on
        project: Map applied to every accepted state

    Returns:
        Trajectory with samples and the terminal Event

    Raises:
        StateValidationError: y0 is not finite or horizon is not positive
    """
    cfg = config or IntegratorConfig()
    y = np.array(y0, dtype=float)
    if y.ndim != 1 or not np.all(np.isfinite(y)):
        raise StateValidationError('Initial state must be a finite 1-D vector')
    if not horizon > 0:
        raise StateValidationError(f'horizon must be positive, got {horizon}')

    n_rhs = 0

    def f(s, state):
        nonlocal n_rhs
        n_rhs += 1
        return rhs(s, state)

    s = float(s0)
    s_end = s + horizon
    grid = []
    if output_grid is not None:
        grid = sorted(float(g) for g in np.unique(np.asarray(output_grid, dtype=float))
                      if s < g <= s_end)
    grid_pos = 0

    ts = [s]
    ys = [y.copy()]
    n_steps = 0
    n_rejected = 0

    def finish(event: Event) -> Trajectory:
        logger.debug('Integration stopped: %s at s=%.6g after %d steps (%d rejected)',
                     event.kind, event.s, n_steps, n_rejected)
        return Trajectory(s=np.asarray(ts), y=np.vstack(ys), event=event,
                          n_steps=n_steps, n_rejected=n_rejected, n_rhs=n_rhs)

    for det in events:
        det.reset(s, y)
        if det.triggered(s, y):
            return finish(Event(det.kind, s, det.value(s, y), det.index))

    adaptive = cfg.mode == 'adaptive'
    k1 = f(s, y)
    if not np.all(np.isfinite(k1)):
        return finish(Event('blowup', s, float('nan')))

    if adaptive:
        h = _initial_step(f, s, y, k1, cfg)
    else:
        h = cfg.fixed_step
    err_prev = 1e-4
    last_rejected = False

    def step(s_from, y_from, k_from, length):
        if adaptive:
            return dormand_prince_step(f, s_from, y_from, length, k_from)
        return rk4_step(f, s_from, y_from, length), None, None

    while True:
        if n_steps >= cfg.max_steps:
            logger.warning('Step budget of %d exhausted at s=%.6g', cfg.max_steps, s)
            return finish(Event('stall', s, float(n_steps)))

        s_target = grid[grid_pos] if grid_pos < len(grid) else s_end
        h_try = min(h, cfg.max_step) if adaptive else h
        truncated = False
        if s + h_try >= s_target or s_target - (s + h_try) < cfg.min_step:
            h_try = s_target - s
            truncated = True

        y_new, err_vec, k_new = step(s, y, k1, h_try)

        if not np.all(np.isfinite(y_new)) or (err_vec is not None and not np.all(np.isfinite(err_vec))):
            n_rejected += 1
            h = 0.25 * h_try
            last_rejected = True
            if h < cfg.min_step or not adaptive:
                return finish(Event('blowup', s, float('nan')))
            continue

        if adaptive:
            scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
            err = float(np.max(np.abs(err_vec) / scale))
        else:
            err = 0.0

        if err > 1.0:
            n_rejected += 1
            factor = max(0.2, cfg.safety * err ** (-1.0 / DP_ORDER))
            h = h_try * factor
            last_rejected = True
            if h < cfg.min_step:
                logger.warning('Step size underflow at s=%.6g (h=%.3g)', s, h)
                return finish(Event('stall', s, h))
            continue

        s_new = s_target if truncated else s + h_try
        if project is not None:
            y_new = project(y_new)
            k_new = None
        if adaptive and k_new is None:
            k_new = f(s_new, y_new)

        fired = [det for det in events if det.triggered(s_new, y_new)]
        if fired:
            best = None
            for det in fired:
                h_evt, y_evt = _localize(step, s, y, k1, h_try, y_new, det, cfg, project)
                if best is None or h_evt < best[0]:
                    best = (h_evt, y_evt, det)
            h_evt, y_evt, det = best
            s_evt = s + h_evt
            n_steps += 1
            ts.append(s_evt)
            ys.append(y_evt)
            return finish(Event(det.kind, s_evt, det.value(s_evt, y_evt), det.index))

        n_steps += 1
        s, y = s_new, y_new
        ts.append(s)
        ys.append(y.copy())
        for det in events:
            det.observe(s, y)
        if adaptive:
            k1 = k_new

        if float(np.max(np.abs(y))) > cfg.blowup:
            return finish(Event('blowup', s, float(np.max(np.abs(y)))))
        if truncated and grid_pos < len(grid) and s_target == grid[grid_pos]:
            grid_pos += 1
        if s >= s_end:
            return finish(Event('s-horizon', s, s))

        if adaptive:
            # PI controller
            err_eff = max(err, 1e-10)
            factor = cfg.safety * err_eff ** (-0.7 / DP_ORDER) * err_prev ** (0.4 / DP_ORDER)
            factor = min(5.0, max(0.2, factor))
            if last_rejected:
                factor = min(1.0, factor)
            h_next = h_try * factor
            h = max(h, h_next) if truncated else h_next
            h = min(h, cfg.max_step)
            err_prev = max(err, 1e-4)
        last_rejected = False


def _localize(step, s, y, k1, h_hi, y_hi, detector, cfg, project):
    """Bisect the step length down to the first state where ``detector`` fires."""
    lo, hi = 0.0, h_hi
    tol = cfg.event_tol * max(1.0, abs(s))
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        y_mid = step(s, y, k1, mid)[0]
        if project is not None:
            y_mid = project(y_mid)
        if detector.triggered(s + mid, y_mid):
            hi, y_hi = mid, y_mid
        else:
            lo = mid
    return hi, y_hi


def solve_fixed(rhs, y0, s_end: float, h: float, s0: float = 0.0) -> np.ndarray:
    """Integrate with n equal classic RK4 steps; used for order checks."""
    y = np.array(y0, dtype=float)
    n = max(1, int(math.ceil((s_end - s0) / h - 1e-9)))
    step = (s_end - s0) / n
    s = s0
    for _ in range(n):
        y = rk4_step(rhs, s, y, step)
        s += step
    return y
