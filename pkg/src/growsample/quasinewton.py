"""Limited-memory BFGS and the two line searches used by the drivers."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "LbfgsMemory",
    "LineSearchResult",
    "LineSearchError",
    "CURVATURE_THRESHOLD",
    "shanno_phua_scale",
    "armijo_search",
    "wolfe_search",
    "SATISFIED",
    "MAX_BACKTRACKS",
    "STEP_UNDERFLOW",
]

CURVATURE_THRESHOLD = 1e-10

SATISFIED = "satisfied"
MAX_BACKTRACKS = "max-backtracks"
STEP_UNDERFLOW = "step-underflow"


def shanno_phua_scale(s, y) -> float:
    """Initial inverse-Hessian scaling (y^T s) / (y^T y)."""
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    sy = float(s @ y)
    if sy <= 0:
        raise ValueError(f"scaling needs s^T y > 0, got {sy}")
    return sy / float(y @ y)


class LbfgsMemory:
    """Ring buffer of correction pairs (s, y) with a curvature skip rule."""

    def __init__(self, capacity: int = 10, scaling: str = "shanno-phua",
                 threshold: float = CURVATURE_THRESHOLD):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if scaling not in ("shanno-phua", "identity"):
            raise ValueError(f"unknown scaling {scaling!r}")
        self.capacity = capacity
        self.scaling = scaling
        self.threshold = threshold
        self.pairs: deque = deque(maxlen=capacity)

    def __len__(self):
        return len(self.pairs)

    def clear(self):
        self.pairs.clear()

    def push_pair(self, s, y) -> bool:
        """Store (s, y) iff s^T y > threshold * ||s|| ||y||; evicts the oldest at capacity."""
        s = np.array(s, dtype=float)
        y = np.array(y, dtype=float)
        if s.shape != y.shape:
            raise ValueError("s and y must have the same shape")
        sy = float(s @ y)
        if not sy > self.threshold * np.linalg.norm(s) * np.linalg.norm(y):
            return False
        self.pairs.append((s, y, 1.0 / sy))
        return True

    def initial_scale(self) -> float:
        if not self.pairs or self.scaling == "identity":
            return 1.0
        s, y, rho = self.pairs[-1]
        return 1.0 / (rho * float(y @ y))

    def apply_inverse(self, g) -> np.ndarray:
        """H g by the two-loop recursion (H = inverse-Hessian approximation)."""
        q = np.array(g, dtype=float)
        alphas = []
        for s, y, rho in reversed(self.pairs):
            a = rho * float(s @ q)
            q -= a * y
            alphas.append(a)
        r = self.initial_scale() * q
        for (s, y, rho), a in zip(self.pairs, reversed(alphas)):
            b = rho * float(y @ r)
            r += (a - b) * s
        return r

    def direction(self, g) -> np.ndarray:
        return -self.apply_inverse(g)


@dataclass(frozen=True)
class LineSearchResult:
    step: float
    evaluations: int
    status: str
    value: float
    derivative: float | None = None

    @property
    def ok(self) -> bool:
        return self.status == SATISFIED


class LineSearchError(ValueError):
    pass


def _interp_backtrack(f0, d0, a1, f1, a2=None, f2=None):
    """Trial step from quadratic (one rejected point) or cubic (two) interpolation."""
    if a2 is None:
        denom = 2.0 * (f1 - f0 - d0 * a1)
        return -d0 * a1 * a1 / denom if denom > 0 else 0.5 * a1
    # cubic phi(a) = f0 + d0 a + c2 a^2 + c3 a^3 through (a1, f1), (a2, f2); a1 newest
    r1 = f1 - f0 - d0 * a1
    r2 = f2 - f0 - d0 * a2
    det = a1 * a1 * a2 * a2 * (a1 - a2)
    if det == 0:
        return 0.5 * a1
    c3 = (a2 * a2 * r1 - a1 * a1 * r2) / det
    c2 = (-a2 ** 3 * r1 + a1 ** 3 * r2) / det
    if c3 == 0:
        return -d0 / (2.0 * c2) if c2 > 0 else 0.5 * a1
    disc = c2 * c2 - 3.0 * c3 * d0
    if disc < 0:
        return 0.5 * a1
    return (-c2 + math.sqrt(disc)) / (3.0 * c3)


def armijo_search(phi: Callable[[float], float], phi0: float, dphi0: float,
                  alpha0: float = 1.0, eta: float = 1e-4, max_backtracks: int = 50,
                  min_step: float = 1e-14) -> LineSearchResult:
    """Backtrack until phi(a) < phi0 + eta * a * dphi0.

    New trials come from quadratic then cubic interpolation, clamped to
    [0.1, 0.9] times the previous trial.  ``phi`` returns the value only.
    """
    if not dphi0 < 0:
        raise LineSearchError(f"initial slope must be negative, got {dphi0}")
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    a, prev = float(alpha0), None
    evals = 0
    for _ in range(max_backtracks + 1):
        if a < min_step:
            return LineSearchResult(a, evals, STEP_UNDERFLOW, math.nan)
        fa = float(phi(a))
        evals += 1
        if fa < phi0 + eta * a * dphi0:
            return LineSearchResult(a, evals, SATISFIED, fa)
        if not math.isfinite(fa):
            a_new = 0.1 * a
        elif prev is None:
            a_new = _interp_backtrack(phi0, dphi0, a, fa)
        else:
            a_new = _interp_backtrack(phi0, dphi0, a, fa, prev[0], prev[1])
        if not math.isfinite(a_new):
            a_new = 0.5 * a
        prev = (a, fa) if math.isfinite(fa) else prev
        a = min(max(a_new, 0.1 * a), 0.9 * a)
    return LineSearchResult(a, evals, MAX_BACKTRACKS, math.nan)


def _hermite_cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the Hermite cubic on [a, b] (either order), or None."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    rad = d1 * d1 - da * db
    if rad < 0:
        return None
    d2 = math.copysign(math.sqrt(rad), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def wolfe_search(phi: Callable[[float], tuple[float, float]], phi0: float, dphi0: float,
                 alpha0: float = 1.0, c1: float = 1e-4, c2: float = 0.9,
                 max_evals: int = 25, alpha_max: float = 1e10,
                 min_step: float = 1e-14) -> LineSearchResult:
    """Bracket-and-zoom search for the strong Wolfe conditions.

    ``phi(a)`` returns (value, slope).  Trial points inside a bracket come
    from the Hermite cubic through its endpoints, safeguarded to the middle
    80% of the bracket.  If the evaluation cap is hit, the best sufficient-
    decrease point seen is returned with status ``max-backtracks``.
    """
    if not dphi0 < 0:
        raise LineSearchError(f"initial slope must be negative, got {dphi0}")
    if not 0 < c1 < c2 < 1:
        raise ValueError("need 0 < c1 < c2 < 1")
    evals = 0
    best = (0.0, phi0, dphi0)

    def armijo_ok(a, fa):
        return fa <= phi0 + c1 * a * dphi0

    def curv_ok(da):
        return abs(da) <= -c2 * dphi0

    def note(a, fa, da):
        nonlocal best
        if armijo_ok(a, fa) and fa < best[1]:
            best = (a, fa, da)

    def give_up():
        a, fa, da = best
        return LineSearchResult(a, evals, MAX_BACKTRACKS, fa, da)

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi):
        nonlocal evals
        while evals < max_evals:
            width = hi - lo
            if abs(width) < min_step:
                return LineSearchResult(lo, evals, STEP_UNDERFLOW, f_lo, d_lo)
            a = _hermite_cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            left, right = lo + 0.1 * width, lo + 0.9 * width
            if a is None or not math.isfinite(a) or not min(left, right) <= a <= max(left, right):
                a = lo + 0.5 * width
            fa, da = phi(a)
            evals += 1
            note(a, fa, da)
            if not armijo_ok(a, fa) or fa >= f_lo:
                hi, f_hi, d_hi = a, fa, da
            else:
                if curv_ok(da):
                    return LineSearchResult(a, evals, SATISFIED, fa, da)
                if da * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = a, fa, da
        return give_up()

    a_prev, f_prev, d_prev = 0.0, phi0, dphi0
    a = float(alpha0)
    while evals < max_evals:
        fa, da = phi(a)
        evals += 1
        if not (math.isfinite(fa) and math.isfinite(da)):
            # shrink toward the last good point
            a = a_prev + 0.1 * (a - a_prev)
            if a - a_prev < min_step:
                return LineSearchResult(a_prev, evals, STEP_UNDERFLOW, f_prev, d_prev)
            continue
        note(a, fa, da)
        if not armijo_ok(a, fa) or (a_prev > 0 and fa >= f_prev):
            return zoom(a_prev, f_prev, d_prev, a, fa, da)
        if curv_ok(da):
            return LineSearchResult(a, evals, SATISFIED, fa, da)
        if da >= 0:
            return zoom(a, fa, da, a_prev, f_prev, d_prev)
        a_prev, f_prev, d_prev = a, fa, da
        a = min(2.0 * a, alpha_max)
    return give_up()
