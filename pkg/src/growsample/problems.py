"""Sum-structured objectives f(x) = (1/M) sum_i f_i(x) + (lam/2) ||x||^2.

Every problem exposes per-term access (``term_value``, ``term_gradient``)
and vectorized batch sums over an index subset.  Per-term quantities never
include the regularizer; it is applied once, at the aggregate level, by
``full_value``/``full_gradient`` and by :meth:`SumProblem.sampled`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, logsumexp

__all__ = [
    "ProblemConstants",
    "SumProblem",
    "SyntheticQuadratic",
    "LeastSquares",
    "BinaryLogistic",
    "MultinomialLogistic",
    "binary_logistic_term",
    "multinomial_logistic_term",
    "log1pexp",
    "lipschitz_bound_logistic",
    "spectral_norm_sq",
    "tree_sum",
]

_CHUNK = 1024


def tree_sum(rows: np.ndarray, chunk: int = _CHUNK) -> np.ndarray:
    """Sum along axis 0 in fixed-size chunks, then combine partials pairwise.

    The order depends only on the number of rows, never on how the rows were
    produced, so repeated calls are bit-identical.
    """
    rows = np.asarray(rows, dtype=float)
    m = rows.shape[0]
    if m == 0:
        return np.zeros(rows.shape[1:])
    partials = [np.add.reduce(rows[s:s + chunk], axis=0) for s in range(0, m, chunk)]
    while len(partials) > 1:
        paired = [partials[j] + partials[j + 1] for j in range(0, len(partials) - 1, 2)]
        if len(partials) % 2:
            paired.append(partials[-1])
        partials = paired
    return partials[0]


def log1pexp(t):
    """Overflow-safe log(1 + exp(t)), branching at 0."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t > 0
    out[pos] = t[pos] + np.log1p(np.exp(-t[pos]))
    out[~pos] = np.log1p(np.exp(t[~pos]))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ProblemConstants:
    """Known (or certified) constants of a problem; any field may be absent."""

    mu: float | None = None
    L: float | None = None
    f_star: float | None = None
    x_star: np.ndarray | None = None
    beta1: float | None = None
    beta2: float | None = None

    def __post_init__(self):
        if self.mu is not None and self.mu < 0:
            raise ValueError(f"mu must be nonnegative, got {self.mu}")
        if self.L is not None and self.L <= 0:
            raise ValueError(f"L must be positive, got {self.L}")
        if self.mu is not None and self.L is not None and self.mu > self.L:
            raise ValueError(f"need mu <= L, got mu={self.mu}, L={self.L}")
        if self.beta1 is not None and self.beta1 < 0:
            raise ValueError("beta1 must be >= 0")
        if self.beta2 is not None and self.beta2 < 1:
            raise ValueError("beta2 must be >= 1")

    def replace(self, **changes) -> "ProblemConstants":
        fields = dict(mu=self.mu, L=self.L, f_star=self.f_star, x_star=self.x_star,
                      beta1=self.beta1, beta2=self.beta2)
        fields.update(changes)
        return ProblemConstants(**fields)


class SumProblem:
    """Base class for f(x) = (1/M) sum_i f_i(x) + (lam/2)||x||^2.

    Subclasses implement ``term_value``, ``term_gradient`` and, for speed,
    ``batch_sums`` and ``term_gradients``.
    """

    M: int
    n: int
    lam: float = 0.0
    constants: ProblemConstants = ProblemConstants()

    # -- per-term access -------------------------------------------------
    def term_value(self, i: int, x: np.ndarray) -> float:
        raise NotImplementedError

    def term_gradient(self, i: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def term_gradients(self, x: np.ndarray, idx) -> np.ndarray:
        """Dense ``(len(idx), n)`` array of unregularized term gradients."""
        x = self._check(x)
        return np.array([self.term_gradient(int(i), x) for i in idx]).reshape(len(idx), self.n)

    def batch_sums(self, x: np.ndarray, idx=None) -> tuple[float, np.ndarray]:
        """Unregularized sums (sum_i f_i(x), sum_i grad f_i(x)) over ``idx`` (all terms if None)."""
        x = self._check(x)
        idx = range(self.M) if idx is None else idx
        vals = np.array([self.term_value(int(i), x) for i in idx])
        grads = self.term_gradients(x, idx)
        return float(tree_sum(vals)), tree_sum(grads)

    # -- aggregates --------------------------------------------------------
    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected x of shape ({self.n},), got {x.shape}")
        return x

    def _normalize_idx(self, idx):
        # a sorted unique index set of size M is the full set
        if idx is None:
            return None
        idx = np.asarray(idx, dtype=np.intp)
        return None if idx.size == self.M else idx

    def sampled(self, x, idx=None) -> tuple[float, np.ndarray]:
        """Sample-average value and gradient over ``idx`` plus the regularizer."""
        x = self._check(x)
        idx = self._normalize_idx(idx)
        count = self.M if idx is None else idx.size
        if count == 0:
            raise ValueError("empty sample")
        fsum, gsum = self.batch_sums(x, idx)
        value = fsum / count + 0.5 * self.lam * float(x @ x)
        grad = gsum / count + self.lam * x
        return value, grad

    def full_value_and_gradient(self, x) -> tuple[float, np.ndarray]:
        return self.sampled(x, None)

    def full_value(self, x) -> float:
        return self.sampled(x, None)[0]

    def full_gradient(self, x) -> np.ndarray:
        return self.sampled(x, None)[1]

    def gap(self, x, f_star: float | None = None) -> float | None:
        """Optimality gap f(x) - f*, or None when f* is unknown."""
        f_star = self.constants.f_star if f_star is None else f_star
        if f_star is None:
            return None
        return self.full_value(x) - f_star

    # -- stochastic passes -------------------------------------------------
    def sgd_steps(self, x: np.ndarray, order: np.ndarray, steps: np.ndarray) -> np.ndarray:
        """Apply x <- x - step_t * (grad f_{order[t]}(x) + lam*x) for each t."""
        x = np.array(self._check(x), dtype=float)
        for i, a in zip(order, steps):
            g = self.term_gradient(int(i), x) + self.lam * x
            x = x - a * g
        return x


# ---------------------------------------------------------------------------
# synthetic quadratic
# ---------------------------------------------------------------------------

class SyntheticQuadratic(SumProblem):
    """Per-term quadratics f_i(x) = 0.5 (x - c_i)^T diag(d) (x - c_i).

    All constants are available in closed form: with H = diag(d) + lam*I,
    mu = min(H), L = max(H), x* = diag(d) c_bar / (d + lam).
    A zero entry in ``d`` (with lam = 0) gives a flat direction; mu is 0 then.
    """

    def __init__(self, d, centers, lam: float = 0.0):
        d = np.asarray(d, dtype=float)
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        if d.ndim != 1 or np.any(d < 0):
            raise ValueError("curvatures must be a nonnegative vector")
        if centers.shape[1] != d.size:
            raise ValueError(f"centers have {centers.shape[1]} columns, expected {d.size}")
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        self.d = d
        self.centers = centers
        self.M, self.n = centers.shape
        self.lam = float(lam)
        h = d + self.lam
        c_bar = centers.mean(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            x_star = np.where(h > 0, d * c_bar / np.where(h > 0, h, 1.0), 0.0)
        # f* = mean_i 0.5 c_i^T D c_i - 0.5 sum_j (d_j c_bar_j)^2 / h_j
        quad = 0.5 * np.mean(np.einsum("ij,j,ij->i", centers, d, centers))
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = np.where(h > 0, (d * c_bar) ** 2 / np.where(h > 0, h, 1.0), 0.0)
        f_star = quad - 0.5 * float(corr.sum())
        self.hess_diag = h
        self.constants = ProblemConstants(mu=float(h.min()), L=float(h.max()),
                                          f_star=float(f_star), x_star=x_star)

    @classmethod
    def make(cls, n: int, mu: float, L: float, M: int = 1, spread: float = 0.0,
             seed: int = 0, lam: float = 0.0) -> "SyntheticQuadratic":
        """Curvatures evenly spaced in [mu, L]; centers N(0, spread^2), or all zero."""
        d = np.linspace(mu, L, n) if n > 1 else np.array([mu])
        if spread > 0:
            centers = spread * np.random.default_rng(seed).standard_normal((M, n))
        else:
            centers = np.zeros((M, n))
        return cls(d, centers, lam=lam)

    def term_value(self, i, x):
        r = self._check(x) - self.centers[i]
        return 0.5 * float(r @ (self.d * r))

    def term_gradient(self, i, x):
        return self.d * (self._check(x) - self.centers[i])

    def term_gradients(self, x, idx):
        x = self._check(x)
        return (x - self.centers[np.asarray(idx, dtype=np.intp)]) * self.d

    def batch_sums(self, x, idx=None):
        x = self._check(x)
        c = self.centers if idx is None else self.centers[np.asarray(idx, dtype=np.intp)]
        r = x - c
        grads = r * self.d
        vals = 0.5 * np.einsum("ij,ij->i", r, grads)
        return float(tree_sum(vals)), tree_sum(grads)

    def gap(self, x, f_star=None):
        """Closed form 0.5 (x-x*)^T H (x-x*); no cancellation near the optimum."""
        if f_star is not None:
            return super().gap(x, f_star)
        r = self._check(x) - self.constants.x_star
        return 0.5 * float(r @ (self.hess_diag * r))


# ---------------------------------------------------------------------------
# data-fitting models on sparse rows
# ---------------------------------------------------------------------------

def _as_csr(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    return A


class _RowProblem(SumProblem):
    """Shared plumbing for models whose i-th term depends on x through row a_i."""

    def __init__(self, A, lam: float):
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        self.A = _as_csr(A)
        self.M, self.n_features = self.A.shape
        if self.M == 0:
            raise ValueError("data matrix has no rows")
        self.lam = float(lam)

    def _row(self, i):
        lo, hi = self.A.indptr[i], self.A.indptr[i + 1]
        return self.A.indices[lo:hi], self.A.data[lo:hi]

    def _rows(self, idx):
        return self.A if idx is None else self.A[np.asarray(idx, dtype=np.intp)]


class LeastSquares(_RowProblem):
    """f_i(x) = 0.5 (a_i^T x - b_i)^2."""

    def __init__(self, A, b, lam: float = 0.0):
        super().__init__(A, lam)
        self.b = np.asarray(b, dtype=float)
        if self.b.shape != (self.M,):
            raise ValueError("targets must have one entry per row")
        self.n = self.n_features
        self.constants = ProblemConstants()

    def lipschitz_bound(self) -> float:
        """||A||^2 / M + lam."""
        return spectral_norm_sq(self.A) / self.M + self.lam

    def term_value(self, i, x):
        cols, vals = self._row(i)
        r = float(vals @ self._check(x)[cols]) - self.b[i]
        return 0.5 * r * r

    def term_gradient(self, i, x):
        cols, vals = self._row(i)
        x = self._check(x)
        g = np.zeros(self.n)
        g[cols] = (float(vals @ x[cols]) - self.b[i]) * vals
        return g

    def term_gradients(self, x, idx):
        rows = self._rows(np.asarray(idx, dtype=np.intp))
        r = rows @ self._check(x) - self.b[np.asarray(idx, dtype=np.intp)]
        return np.asarray(rows.multiply(r[:, None]).todense())

    def batch_sums(self, x, idx=None):
        x = self._check(x)
        rows = self._rows(idx)
        b = self.b if idx is None else self.b[np.asarray(idx, dtype=np.intp)]
        r = rows @ x - b
        return float(tree_sum(0.5 * r * r)), rows.T @ r


def binary_logistic_term(cols, vals, label: float, x) -> tuple[float, np.ndarray]:
    """Value log(1 + exp(-b a^T x)) and its gradient for one sparse row.

    Returns the gradient as a dense vector the size of ``x``.
    """
    if label not in (-1, 1):
        raise ValueError(f"binary label must be +1 or -1, got {label}")
    x = np.asarray(x, dtype=float)
    z = label * float(np.asarray(vals) @ x[np.asarray(cols, dtype=np.intp)])
    g = np.zeros_like(x)
    g[cols] = -label * float(expit(-z)) * np.asarray(vals, dtype=float)
    return log1pexp(-z), g


class BinaryLogistic(_RowProblem):
    """f_i(x) = log(1 + exp(-b_i a_i^T x)), labels b_i in {-1, +1}."""

    def __init__(self, A, b, lam: float = 0.0):
        super().__init__(A, lam)
        b = np.asarray(b, dtype=float)
        if b.shape != (self.M,):
            raise ValueError("labels must have one entry per row")
        if not np.all(np.isin(b, (-1.0, 1.0))):
            raise ValueError("binary labels must be +1 or -1")
        self.b = b
        self.n = self.n_features
        mu = self.lam if self.lam > 0 else None
        self.constants = ProblemConstants(mu=mu, L=None)

    def term_value(self, i, x):
        cols, vals = self._row(i)
        return binary_logistic_term(cols, vals, self.b[i], self._check(x))[0]

    def term_gradient(self, i, x):
        cols, vals = self._row(i)
        return binary_logistic_term(cols, vals, self.b[i], self._check(x))[1]

    def _margins(self, x, idx):
        rows = self._rows(idx)
        b = self.b if idx is None else self.b[np.asarray(idx, dtype=np.intp)]
        return rows, b, b * (rows @ x)

    def term_gradients(self, x, idx):
        rows, b, z = self._margins(self._check(x), np.asarray(idx, dtype=np.intp))
        w = -b * expit(-z)
        return np.asarray(rows.multiply(w[:, None]).todense())

    def batch_sums(self, x, idx=None):
        rows, b, z = self._margins(self._check(x), idx)
        w = -b * expit(-z)
        return float(tree_sum(log1pexp(-z))), rows.T @ w

    def lipschitz_bound(self) -> float:
        return lipschitz_bound_logistic(self.A, self.lam)

    def sgd_steps(self, x, order, steps):
        from ._kernels import logistic_sgd_steps

        x = np.array(self._check(x), dtype=float)
        logistic_sgd_steps(self.A.indptr, self.A.indices, self.A.data, self.b, self.lam,
                           x, np.asarray(order, dtype=np.int64),
                           np.asarray(steps, dtype=float))
        return x


def multinomial_logistic_term(cols, vals, label: int, X) -> tuple[float, np.ndarray]:
    """Softmax negative log-likelihood for one row; ``X`` has one row per class."""
    X = np.asarray(X, dtype=float)
    n_classes = X.shape[0]
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if not 0 <= int(label) < n_classes:
        raise ValueError(f"class index {label} out of range [0, {n_classes})")
    cols = np.asarray(cols, dtype=np.intp)
    vals = np.asarray(vals, dtype=float)
    s = X[:, cols] @ vals
    lse = float(logsumexp(s))
    p = np.exp(s - lse)
    p[int(label)] -= 1.0
    G = np.zeros_like(X)
    G[:, cols] = np.outer(p, vals)
    return lse - float(s[int(label)]), G


class MultinomialLogistic(_RowProblem):
    """Multiclass softmax regression; x is the row-major flattening of X (classes x features)."""

    def __init__(self, A, labels, n_classes: int | None = None, lam: float = 0.0):
        super().__init__(A, lam)
        labels = np.asarray(labels)
        if labels.shape != (self.M,):
            raise ValueError("labels must have one entry per row")
        if np.any(labels != np.round(labels)) or np.any(labels < 0):
            raise ValueError("class labels must be nonnegative integers")
        labels = labels.astype(np.intp)
        self.n_classes = int(labels.max()) + 1 if n_classes is None else int(n_classes)
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if labels.max() >= self.n_classes:
            raise ValueError("class index out of range")
        self.labels = labels
        self.n = self.n_classes * self.n_features
        self.constants = ProblemConstants(mu=self.lam if self.lam > 0 else None)

    def lipschitz_bound(self) -> float:
        """0.5 ||A||^2 / M + lam; the softmax Hessian diag(p) - p p^T is at most 1/2."""
        return 0.5 * spectral_norm_sq(self.A) / self.M + self.lam

    def _mat(self, x):
        return self._check(x).reshape(self.n_classes, self.n_features)

    def term_value(self, i, x):
        cols, vals = self._row(i)
        return multinomial_logistic_term(cols, vals, self.labels[i], self._mat(x))[0]

    def term_gradient(self, i, x):
        cols, vals = self._row(i)
        return multinomial_logistic_term(cols, vals, self.labels[i], self._mat(x))[1].ravel()

    def _scores(self, x, idx):
        rows = self._rows(idx)
        y = self.labels if idx is None else self.labels[np.asarray(idx, dtype=np.intp)]
        S = np.asarray(rows @ self._mat(x).T)
        lse = logsumexp(S, axis=1)
        P = np.exp(S - lse[:, None])
        P[np.arange(y.size), y] -= 1.0
        return rows, y, S, lse, P

    def term_gradients(self, x, idx):
        rows, _, _, _, P = self._scores(x, np.asarray(idx, dtype=np.intp))
        dense = np.asarray(rows.todense())
        return (P[:, :, None] * dense[:, None, :]).reshape(len(idx), self.n)

    def batch_sums(self, x, idx=None):
        rows, y, S, lse, P = self._scores(x, idx)
        vals = lse - S[np.arange(y.size), y]
        G = np.asarray(rows.T @ P).T
        return float(tree_sum(vals)), G.ravel()


# ---------------------------------------------------------------------------
# Lipschitz bound for logistic models
# ---------------------------------------------------------------------------

def spectral_norm_sq(A, tol: float = 1e-6, max_iter: int = 1000, seed: int = 0) -> float:
    """Largest eigenvalue of A^T A by power iteration (Rayleigh quotient).

    Warns and returns the last estimate if the relative change has not
    dropped below ``tol`` after ``max_iter`` iterations.
    """
    A = sp.csr_matrix(A, dtype=float) if sp.issparse(A) else np.asarray(A, dtype=float)
    if A.shape[0] == 0 or A.shape[1] == 0:
        raise ValueError("data matrix is empty")
    v = np.random.default_rng(seed).standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    theta = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        new_theta = float(v @ w)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0
        v = w / norm_w
        if abs(new_theta - theta) <= tol * abs(new_theta):
            return new_theta
        theta = new_theta
    warnings.warn(f"power iteration did not converge in {max_iter} iterations; "
                  f"last estimate {theta:.6g}", RuntimeWarning, stacklevel=2)
    return theta


def lipschitz_bound_logistic(A, lam: float = 0.0, tol: float = 1e-6, max_iter: int = 1000) -> float:
    """0.25 ||A||^2 / M + lam: a gradient Lipschitz bound for the averaged regularized log-loss."""
    m = A.shape[0]
    if m == 0:
        raise ValueError("data matrix is empty")
    return 0.25 * spectral_norm_sq(A, tol=tol, max_iter=max_iter) / m + lam

