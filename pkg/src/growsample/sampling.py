"""Batch selection, batch-size schedules and gradient-residual bounds.

Indices are 0-based throughout: a sample is a sorted subset of
``range(M)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .problems import SumProblem, tree_sum

__all__ = [
    "SampleSet",
    "Schedule",
    "GradientResidualBound",
    "DETERMINISTIC_PREFIX",
    "UNIFORM",
    "counter_rng",
    "next_batch_size_paper",
    "batch_size_geometric_det",
    "batch_size_geometric_stoch",
    "batch_size_strong_rate",
    "draw_sample",
    "residual",
    "sample_variance",
    "expected_residual_sq",
    "deterministic_bound",
    "stochastic_beta_bound",
]

DETERMINISTIC_PREFIX = "deterministic-prefix"
UNIFORM = "uniform-without-replacement"
_MODES = (DETERMINISTIC_PREFIX, UNIFORM)

# stream tags keep independent uses of one (seed, k) key apart
STREAM_SAMPLE = 0
STREAM_NOISE = 1
STREAM_SGD = 2


def counter_rng(seed: int, k: int, stream: int = STREAM_SAMPLE) -> np.random.Generator:
    """Philox generator keyed by (seed, k, stream); no replay of earlier draws needed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([stream, seed, k])))


@dataclass(frozen=True)
class SampleSet:
    """Sorted unique indices drawn at iteration ``k``."""

    indices: np.ndarray
    M: int
    k: int = 0
    seed: int | None = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.intp)
        if idx.ndim != 1 or not 1 <= idx.size <= self.M:
            raise ValueError(f"sample size must be in [1, {self.M}], got {idx.size}")
        if np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= self.M:
            raise ValueError("indices must be sorted, unique and within range(M)")
        object.__setattr__(self, "indices", idx)

    @property
    def size(self) -> int:
        return int(self.indices.size)

    @property
    def is_full(self) -> bool:
        return self.size == self.M

    def complement(self) -> np.ndarray:
        mask = np.ones(self.M, dtype=bool)
        mask[self.indices] = False
        return np.flatnonzero(mask)

    def same_as(self, other: "SampleSet | None") -> bool:
        return (other is not None and other.M == self.M and other.size == self.size
                and bool(np.array_equal(other.indices, self.indices)))

    @classmethod
    def full(cls, M: int, k: int = 0) -> "SampleSet":
        return cls(np.arange(M), M, k)


# ---------------------------------------------------------------------------
# batch-size rules
# ---------------------------------------------------------------------------

def next_batch_size_paper(b_prev: int, M: int) -> int:
    """ceil(min(1.1 b + 1, M)), evaluated in integers: 1.1 b + 1 = (11 b + 10) / 10."""
    if not 1 <= b_prev <= M:
        raise ValueError(f"need 1 <= b_prev <= M, got b_prev={b_prev}, M={M}")
    return min(-(-(11 * b_prev + 10) // 10), M)


def _smallest_satisfying(pred, M: int) -> int:
    """Smallest b in [1, M] with pred(b) true, for pred monotone in b; M if none."""
    if pred(1):
        return 1
    lo, hi = 1, M  # pred(lo) false, answer in (lo, hi]
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


def batch_size_geometric_det(k: int, M: int, gamma: float) -> int:
    """Smallest b in [1, M] with (M - b)/M <= gamma^(k/2)."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    target = gamma ** (k / 2)
    return _smallest_satisfying(lambda b: (M - b) / M <= target, M)


def batch_size_geometric_stoch(k: int, M: int, gamma: float) -> int:
    """Smallest b in [1, M] with (M - b)/(M b) <= gamma^k."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    target = gamma ** k
    return _smallest_satisfying(lambda b: (M - b) / (M * b) <= target, M)


def batch_size_strong_rate(gap: float, M: int, L: float, mu: float, rho: float,
                           beta1: float, beta2: float) -> int:
    """Smallest b with 4((M-b)/M)^2 (beta1 + 2 beta2 L gap) <= L (mu/L - rho) gap."""
    if gap <= 0:
        raise ValueError("gap must be positive; a zero gap demands the exact gradient")
    if not 0 < rho <= mu / L:
        raise ValueError(f"need 0 < rho <= mu/L = {mu / L}, got {rho}")
    rhs = L * (mu / L - rho) * gap
    scale = beta1 + 2.0 * beta2 * L * gap
    return _smallest_satisfying(lambda b: 4.0 * ((M - b) / M) ** 2 * scale <= rhs, M)


@dataclass
class Schedule:
    """Batch-size rule: ``size(k, b_prev, **state)`` gives |B_k|.

    Kinds: ``constant``, ``paper-linear`` (b <- ceil(min(1.1 b + 1, M))),
    ``geometric-deterministic``, ``geometric-stochastic``, ``strong-rate``
    and ``add-one``.  Emitted sizes never decrease and are clamped to [1, M].
    The strong-rate kind needs ``gap`` in ``state`` and the constants
    ``L, mu, rho, beta1, beta2`` in ``params``.
    """

    kind: str = "paper-linear"
    initial: int = 1
    gamma: float = 0.9
    params: dict = field(default_factory=dict)

    KINDS = ("constant", "paper-linear", "geometric-deterministic",
             "geometric-stochastic", "strong-rate", "add-one")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; expected one of {self.KINDS}")
        if self.initial < 1:
            raise ValueError("initial batch size must be >= 1")

    def size(self, k: int, M: int, b_prev: int | None = None, **state) -> int:
        init = min(self.initial, M)
        if self.kind == "constant":
            return init
        if self.kind in ("paper-linear", "add-one"):
            if k == 0 or b_prev is None:
                return init
            b = next_batch_size_paper(b_prev, M) if self.kind == "paper-linear" else min(b_prev + 1, M)
        elif self.kind == "geometric-deterministic":
            b = max(init, batch_size_geometric_det(k, M, self.gamma))
        elif self.kind == "geometric-stochastic":
            b = max(init, batch_size_geometric_stoch(k, M, self.gamma))
        else:
            gap = state.get("gap")
            if gap is None or gap <= 0:
                b = M
            else:
                p = self.params
                b = batch_size_strong_rate(gap, M, p["L"], p["mu"], p["rho"],
                                           p.get("beta1", 0.0), p.get("beta2", 1.0))
        if b_prev is not None:
            b = max(b, b_prev)
        return int(min(max(b, 1), M))

    def sizes(self, M: int, count: int) -> list[int]:
        """First ``count`` sizes for state-free kinds."""
        out, b = [], None
        for k in range(count):
            b = self.size(k, M, b)
            out.append(b)
        return out


# ---------------------------------------------------------------------------
# drawing samples
# ---------------------------------------------------------------------------

def draw_sample(M: int, b: int, mode: str = UNIFORM, seed: int = 0, k: int = 0,
                nested: bool = False) -> SampleSet:
    """Deterministic prefix {0..b-1} or b distinct uniform indices keyed by (seed, k).

    With ``nested`` the uniform sample is the first b entries of one
    permutation keyed by ``seed`` alone, so samples grow by inclusion.
    """
    if not 1 <= b <= M:
        raise ValueError(f"batch size {b} outside [1, {M}]")
    if mode not in _MODES:
        raise ValueError(f"unknown sampling mode {mode!r}")
    if b == M or mode == DETERMINISTIC_PREFIX:
        return SampleSet(np.arange(b), M, k, seed)
    if nested:
        perm = counter_rng(seed, 0, STREAM_SAMPLE).permutation(M)
        return SampleSet(np.sort(perm[:b]), M, k, seed)
    rng = counter_rng(seed, k, STREAM_SAMPLE)
    # partial Fisher-Yates: only the first b positions are settled
    perm = np.arange(M)
    swaps = rng.integers(np.arange(b), M)
    for j, r in enumerate(swaps):
        perm[j], perm[r] = perm[r], perm[j]
    return SampleSet(np.sort(perm[:b]), M, k, seed)


# ---------------------------------------------------------------------------
# residuals and bounds
# ---------------------------------------------------------------------------

def residual(p: SumProblem, x, s: SampleSet, rtol: float = 1e-10) -> np.ndarray:
    """e = g_B(x) - grad f(x), cross-checked against the sampled/unsampled split.

    The split form is ((M-b)/(M b)) sum_B grad f_i - (1/M) sum_N grad f_i.
    Raises ``ArithmeticError`` if the two routes disagree beyond ``rtol``.
    """
    M, b = p.M, s.size
    _, g = p.sampled(x, s.indices)
    grad = p.full_gradient(x)
    e = g - grad
    _, sum_b = p.batch_sums(x, None if s.is_full else s.indices)
    comp = s.complement()
    sum_n = p.batch_sums(x, comp)[1] if comp.size else np.zeros(p.n)
    e_split = ((M - b) / (M * b)) * sum_b - sum_n / M
    scale = max(np.linalg.norm(e), np.linalg.norm(sum_b) / b, np.linalg.norm(grad), 1e-300)
    if np.linalg.norm(e - e_split) > rtol * scale:
        raise ArithmeticError("residual routes disagree: "
                              f"|e - e_split| = {np.linalg.norm(e - e_split):.3e}, scale {scale:.3e}")
    return e


def sample_variance(p: SumProblem, x, chunk: int = 1024) -> float:
    """S = (1/(M-1)) sum_i ||grad f_i(x) - grad f(x)||^2 (regularizer cancels)."""
    if p.M < 2:
        raise ValueError("sample variance needs M >= 2")
    _, gsum = p.batch_sums(x, None)
    mean = gsum / p.M
    parts = []
    for start in range(0, p.M, chunk):
        G = p.term_gradients(x, np.arange(start, min(start + chunk, p.M)))
        parts.append(float(np.sum((G - mean) ** 2)))
    return float(tree_sum(np.array(parts))) / (p.M - 1)


def expected_residual_sq(S: float, M: int, b: int) -> float:
    """E||e||^2 = ((M-b)/M) S / b under uniform sampling without replacement."""
    if not 1 <= b <= M:
        raise ValueError(f"batch size {b} outside [1, {M}]")
    if S < 0:
        raise ValueError("variance must be nonnegative")
    return (M - b) / M * S / b


def deterministic_bound(M: int, b: int, beta1: float, beta2: float, L: float, gap: float) -> float:
    """4 ((M-b)/M)^2 (beta1 + 2 beta2 L gap): holds for any sample of size b."""
    if b > M or gap < 0:
        raise ValueError("need b <= M and gap >= 0")
    return 4.0 * ((M - b) / M) ** 2 * (beta1 + 2.0 * beta2 * L * gap)


def stochastic_beta_bound(M: int, b: int, beta1: float, beta2: float, L: float, gap: float) -> float:
    """((M-b)/(M b)) (M/(M-1)) (beta1 + 2 (beta2 - 1) L gap), a bound on E||e||^2.

    With beta2 = 1 the gap term vanishes; a warning flags a zero result
    for a nonzero gap.
    """
    if not 1 <= b <= M or M < 2 or gap < 0:
        raise ValueError("need 1 <= b <= M, M >= 2 and gap >= 0")
    val = (M - b) / (M * b) * (M / (M - 1)) * (beta1 + 2.0 * (beta2 - 1.0) * L * gap)
    if val == 0.0 and gap > 0 and b < M:
        warnings.warn("stochastic bound is zero for a nonzero gap (beta1 = 0, beta2 = 1)",
                      RuntimeWarning, stacklevel=2)
    return val


@dataclass(frozen=True)
class GradientResidualBound:
    """A computed bound on ||e||^2 (deterministic) or E||e||^2 (stochastic kinds)."""

    kind: str
    value: float

    KINDS = ("deterministic", "stochastic-variance", "stochastic-beta")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown bound kind {self.kind!r}")
        if not self.value >= 0:
            raise ValueError("bound must be nonnegative")

    @classmethod
    def compute(cls, kind: str, M: int, b: int, *, S: float | None = None,
                beta1: float = 0.0, beta2: float = 1.0, L: float = 1.0,
                gap: float = 0.0) -> "GradientResidualBound":
        if kind == "deterministic":
            return cls(kind, deterministic_bound(M, b, beta1, beta2, L, gap))
        if kind == "stochastic-variance":
            if S is None:
                raise ValueError("stochastic-variance bound needs S")
            return cls(kind, expected_residual_sq(S, M, b))
        return cls(kind, stochastic_beta_bound(M, b, beta1, beta2, L, gap))

