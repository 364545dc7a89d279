"""Error-bound machinery for gradient descent with inexact gradients.

Covers the one-step upper bound for the step 1/L, noise-bound sequences
B_k (geometric, polynomial, summable, and the state-dependent bound that
yields a per-iteration contraction), the two computable lower bounds on
the optimality gap, certification of the gradient-spread constants
(beta1, beta2), seeded noise injection, and rate estimation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problems import SumProblem
from .sampling import STREAM_NOISE, counter_rng

__all__ = [
    "NoiseBoundSequence",
    "RateEstimate",
    "lemma_bound",
    "strong_rate_noise_bound",
    "pi_gradient_heuristic",
    "pi_step_heuristic",
    "certify_beta",
    "inject_noise",
    "fit_linear_rate",
    "check_sublinear",
    "BETA2_GRID",
]


def lemma_bound(gap: float, err_sq: float, mu: float, L: float) -> float:
    """Upper bound (1 - mu/L) gap + err_sq / (2L) on the next gap for the step 1/L."""
    if gap < 0 or err_sq < 0:
        raise ValueError("gap and err_sq must be nonnegative")
    if not 0 < mu <= L:
        raise ValueError("need 0 < mu <= L")
    return (1.0 - mu / L) * gap + err_sq / (2.0 * L)


def strong_rate_noise_bound(pi: float, mu: float, L: float, rho: float) -> float:
    """Largest B_k = 2L(mu/L - rho) pi that still forces gap_{k+1} <= (1 - rho) gap_k."""
    if rho > mu / L:
        raise ValueError(f"rho={rho} exceeds mu/L={mu / L}")
    if pi < 0:
        raise ValueError("pi must be nonnegative")
    return 2.0 * L * (mu / L - rho) * pi


def pi_gradient_heuristic(g_norm: float, mu: float, L: float) -> float:
    """(mu / (2 L^2)) ||g||^2, a gap lower bound when g is the true gradient."""
    if g_norm < 0:
        raise ValueError("norm must be nonnegative")
    return mu / (2.0 * L * L) * g_norm * g_norm


def pi_step_heuristic(step_norm: float, mu: float) -> float:
    """(mu / 8) ||x_k - x_{k+1}||^2; valid while the distance to x* is nonincreasing."""
    if step_norm < 0:
        raise ValueError("norm must be nonnegative")
    return mu / 8.0 * step_norm * step_norm


@dataclass(frozen=True)
class NoiseBoundSequence:
    """Per-iteration cap B_k on ||e_k||^2 (or on E||e_k||^2).

    kinds:
      ``geometric``   B_k = B0 * gamma^k
      ``polynomial``  B_k = B0 / (k+1)^power
      ``summable``    ||e_k|| <= B0 / (k+1)^power, i.e. B_k = (B0 / (k+1)^power)^2, power > 1
      ``strong-rate`` B_k = 2L(mu/L - rho) pi_k with pi_k from ``pi_source``
                      (``oracle`` = true gap, ``gradient`` or ``step`` heuristics)
      ``zero``        B_k = 0
    """

    kind: str
    B0: float = 0.0
    gamma: float = 1.0
    power: float = 2.0
    rho: float = 0.0
    pi_source: str = "oracle"

    KINDS = ("geometric", "polynomial", "summable", "strong-rate", "zero")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.B0 < 0:
            raise ValueError("B0 must be nonnegative")
        if self.kind == "geometric" and not 0 < self.gamma <= 1:
            raise ValueError("geometric ratio must lie in (0, 1]")
        if self.kind == "summable" and self.power <= 1:
            raise ValueError("summable bounds need power > 1")
        if self.pi_source not in ("oracle", "gradient", "step"):
            raise ValueError(f"unknown pi source {self.pi_source!r}")

    @property
    def state_dependent(self) -> bool:
        return self.kind == "strong-rate"

    def __call__(self, k: int, *, gap: float | None = None, g_norm: float | None = None,
                 step_norm: float | None = None, mu: float | None = None,
                 L: float | None = None) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "geometric":
            return self.B0 * self.gamma ** k
        if self.kind == "polynomial":
            return self.B0 / (k + 1) ** self.power
        if self.kind == "summable":
            return (self.B0 / (k + 1) ** self.power) ** 2
        if mu is None or L is None:
            raise ValueError("strong-rate bound needs mu and L")
        if self.pi_source == "oracle":
            if gap is None:
                raise ValueError("oracle pi needs the true gap")
            pi = max(gap, 0.0)
        elif self.pi_source == "gradient":
            pi = pi_gradient_heuristic(g_norm or 0.0, mu, L)
        else:
            pi = pi_step_heuristic(step_norm or 0.0, mu)
        return strong_rate_noise_bound(pi, mu, L, self.rho)


BETA2_GRID = (1.0, 1.25, 1.5, 2.0, 3.0, 5.0, 10.0, 20.0, 50.0, 100.0, 1e3, 1e4)


def certify_beta(p: SumProblem, probes, beta2_grid=BETA2_GRID) -> tuple[float, float]:
    """Fit (beta1, beta2) with ||grad f_i(x)||^2 <= beta1 + beta2 ||grad f(x)||^2 at every probe.

    Term gradients include the regularizer, so they average to grad f.  For
    each beta2 on the grid, beta1 is the smallest value that works at all
    probes; the returned pair minimizes beta1 + beta2 * median ||grad f||^2.
    """
    probes = [np.asarray(x, dtype=float) for x in probes]
    if not probes:
        raise ValueError("need at least one probe point")
    term_sq, full_sq = [], []
    for x in probes:
        G = p.term_gradients(x, np.arange(p.M)) + p.lam * x
        term_sq.append(float(np.max(np.sum(G * G, axis=1))))
        g = p.full_gradient(x)
        full_sq.append(float(g @ g))
    term_sq, full_sq = np.array(term_sq), np.array(full_sq)
    med = float(np.median(full_sq))
    best = None
    for beta2 in beta2_grid:
        beta1 = max(0.0, float(np.max(term_sq - beta2 * full_sq)))
        score = beta1 + beta2 * med
        if best is None or score < best[0]:
            best = (score, beta1, float(beta2))
    return best[1], best[2]


NOISE_MODES = ("exact-norm", "expectation", "biased")


def inject_noise(target_B: float, n: int, seed: int, k: int, mode: str = "exact-norm") -> np.ndarray:
    """Seeded error vector for iteration ``k``.

    ``exact-norm``: ||e||^2 = target_B along a uniform random direction.
    ``expectation``: ||e||^2 ~ U[0, 2 target_B] along a uniform direction, so E||e||^2 = target_B.
    ``biased``: ||e||^2 = target_B along one direction fixed by ``seed`` (nonzero mean).
    """
    if target_B < 0:
        raise ValueError("target_B must be nonnegative")
    if mode not in NOISE_MODES:
        raise ValueError(f"unknown noise mode {mode!r}")
    if target_B == 0:
        return np.zeros(n)
    rng = counter_rng(seed, 0 if mode == "biased" else k, STREAM_NOISE)
    u = rng.standard_normal(n)
    u /= np.linalg.norm(u)
    norm_sq = target_B
    if mode == "expectation":
        norm_sq = rng.uniform(0.0, 2.0 * target_B)
    return np.sqrt(norm_sq) * u


@dataclass(frozen=True)
class RateEstimate:
    """Per-iteration factor from a log-linear least-squares fit of the gaps."""

    sigma_hat: float
    window: tuple[int, int]
    residual: float
    points: int


_EPS = np.finfo(float).eps


def fit_linear_rate(gaps, window: range | None = None) -> RateEstimate:
    """Fit log(gap_k) = a + k log(sigma) over ``window``.

    The default window is the last half of the sequence, skipping gaps at or
    below 100 * eps * gap_0 (round-off floor).  An explicit window is used as
    given and must contain only positive gaps.
    """
    gaps = np.asarray(gaps, dtype=float)
    if window is None:
        start = gaps.size // 2
        ks = np.arange(start, gaps.size)
        floor = 1e2 * _EPS * abs(gaps[0]) if gaps.size else 0.0
        ks = ks[gaps[ks] > floor]
    else:
        ks = np.asarray(list(window), dtype=int)
        if np.any(gaps[ks] <= 0):
            bad = int(ks[np.argmax(gaps[ks] <= 0)])
            raise ValueError(f"nonpositive gap {gaps[bad]!r} at k={bad} inside the fit window")
    if ks.size < 2:
        raise ValueError("fit window holds fewer than two usable points")
    y = np.log(gaps[ks])
    A = np.column_stack([np.ones(ks.size), ks.astype(float)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return RateEstimate(float(np.exp(coef[1])), (int(ks[0]), int(ks[-1])),
                        float(np.sqrt(np.mean(resid ** 2))), int(ks.size))


def check_sublinear(avg_gaps, start: int = 1) -> float:
    """sup_k k * gap_k, with gaps indexed from ``start`` (k = start, start+1, ...)."""
    g = np.asarray(avg_gaps, dtype=float)
    if g.size == 0:
        return 0.0
    k = np.arange(start, start + g.size, dtype=float)
    return float(np.max(k * g))
