"""LIBSVM text I/O, synthetic data generators and dataset statistics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .problems import BinaryLogistic, LeastSquares, MultinomialLogistic

__all__ = [
    "Dataset",
    "LibsvmParseError",
    "parse_libsvm",
    "load_libsvm",
    "write_libsvm",
    "generate_synthetic_logistic",
    "generate_synthetic_multinomial",
    "dataset_stats",
    "make_problem",
]


class LibsvmParseError(ValueError):
    def __init__(self, line_no: int, token: str, reason: str):
        self.line_no = line_no
        self.token = token
        super().__init__(f"line {line_no}: {reason} (token {token!r})")


@dataclass(frozen=True)
class Dataset:
    """M sparse rows over n features with one label per row."""

    X: sp.csr_matrix
    labels: np.ndarray
    task: str = "binary"
    note: str = ""

    def __post_init__(self):
        if self.task not in ("binary", "multiclass", "regression"):
            raise ValueError(f"unknown task {self.task!r}")
        X = sp.csr_matrix(self.X, dtype=float)
        X.sort_indices()
        labels = np.asarray(self.labels, dtype=float)
        if labels.shape != (X.shape[0],):
            raise ValueError("need exactly one label per row")
        if not (np.all(np.isfinite(X.data)) and np.all(np.isfinite(labels))):
            raise ValueError("dataset contains NaN or Inf")
        if self.task == "binary" and not np.all(np.isin(labels, (-1.0, 1.0))):
            raise ValueError("binary labels must be +1 or -1")
        if self.task == "multiclass" and (np.any(labels < 0) or np.any(labels != np.round(labels))):
            raise ValueError("class labels must be nonnegative integers")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "labels", labels)

    @property
    def M(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.task == other.task and self.X.shape == other.X.shape
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.X.indptr, other.X.indptr)
                and np.array_equal(self.X.indices, other.X.indices)
                and np.array_equal(self.X.data, other.X.data))

    __hash__ = None


def _label(tok: str, task: str, line_no: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise LibsvmParseError(line_no, tok, "label is not numeric") from None
    if task == "binary" and v not in (-1.0, 1.0):
        raise LibsvmParseError(line_no, tok, "binary label must be +1 or -1")
    if task == "multiclass" and (v < 0 or v != int(v)):
        raise LibsvmParseError(line_no, tok, "class label must be a nonnegative integer")
    return v


def parse_libsvm(lines: Iterable[str], n: int | None = None, task: str = "binary") -> Dataset:
    """Parse ``<label> <idx>:<val> ...`` lines (1-based, strictly increasing indices).

    ``#`` starts a comment; blank lines are skipped.  ``n`` defaults to the
    largest index seen.
    """
    indptr, indices, data, labels = [0], [], [], []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        labels.append(_label(toks[0], task, line_no))
        last = 0
        for tok in toks[1:]:
            head, sep, tail = tok.partition(":")
            try:
                if not sep:
                    raise ValueError
                j = int(head)
                v = float(tail)
            except ValueError:
                raise LibsvmParseError(line_no, tok, "expected <index>:<value>") from None
            if j <= 0:
                raise LibsvmParseError(line_no, tok, "indices are 1-based")
            if j <= last:
                raise LibsvmParseError(line_no, tok, "indices must be strictly increasing")
            if not np.isfinite(v):
                raise LibsvmParseError(line_no, tok, "value is not finite")
            last = j
            indices.append(j - 1)
            data.append(v)
        indptr.append(len(indices))
    n_seen = max(indices) + 1 if indices else 0
    if n is None:
        n = n_seen
    elif n < n_seen:
        raise ValueError(f"declared n={n} but index {n_seen} appears")
    X = sp.csr_matrix((np.array(data, dtype=float), np.array(indices, dtype=np.int64),
                       np.array(indptr, dtype=np.int64)), shape=(len(labels), n))
    return Dataset(X, np.array(labels, dtype=float), task)


def load_libsvm(path, n: int | None = None, task: str = "binary") -> Dataset:
    with open(path) as fh:
        ds = parse_libsvm(fh, n=n, task=task)
    return Dataset(ds.X, ds.labels, ds.task, note=str(path))


def write_libsvm(d: Dataset) -> str:
    """LIBSVM text; values use shortest round-trip repr so parsing restores them exactly."""
    out = []
    X = d.X
    for i in range(d.M):
        lab = d.labels[i]
        if d.task == "binary":
            head = "+1" if lab > 0 else "-1"
        elif d.task == "multiclass":
            head = str(int(lab))
        else:
            head = repr(float(lab))
        lo, hi = X.indptr[i], X.indptr[i + 1]
        feats = " ".join(f"{j + 1}:{float(v)!r}" for j, v in zip(X.indices[lo:hi], X.data[lo:hi]))
        out.append(f"{head} {feats}".rstrip())
    return "\n".join(out) + ("\n" if out else "")


def _sparse_gaussian(rng, M, n, sparsity, col_scale):
    mask = rng.random((M, n)) < sparsity
    vals = rng.standard_normal((M, n)) * col_scale
    return sp.csr_matrix(np.where(mask, vals, 0.0))


def generate_synthetic_logistic(M: int, n: int, sparsity: float = 1.0, seed: int = 0,
                                separation: float = 1.0, scale_range: float = 1.0) -> Dataset:
    """Sparse Gaussian features and labels drawn from a planted logistic model.

    P(b_i = +1) = sigmoid(separation * z_i) with z_i = u_i^T w / sqrt(sparsity n),
    u_i the unscaled feature row and w ~ N(0, I).  ``separation = inf`` gives the
    sign rule (ties to +1).  Column j is scaled by ``scale_range ** (j/(n-1))``,
    so the curvature spreads over ``scale_range ** 2``.
    """
    if M < 1 or n < 1:
        raise ValueError("need M, n >= 1")
    if not 0 < sparsity <= 1:
        raise ValueError("sparsity must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    col_scale = scale_range ** (np.arange(n) / max(n - 1, 1))
    X0 = _sparse_gaussian(rng, M, n, sparsity, np.ones(n))
    w = rng.standard_normal(n)
    z = X0 @ w / np.sqrt(sparsity * n)
    X = sp.csr_matrix(X0 @ sp.diags(col_scale))
    if np.isinf(separation):
        b = np.where(z >= 0, 1.0, -1.0)
    else:
        u = rng.random(M)
        b = np.where(u < expit(separation * z), 1.0, -1.0)
    return Dataset(X, b, "binary", note=f"synthetic-logistic M={M} n={n} seed={seed}")


def generate_synthetic_multinomial(M: int, n: int, n_classes: int = 3, sparsity: float = 1.0,
                                   seed: int = 0, separation: float = 1.0) -> Dataset:
    """Sparse Gaussian features with classes drawn from a planted softmax model."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    X = _sparse_gaussian(rng, M, n, sparsity, np.ones(n))
    W = rng.standard_normal((n_classes, n))
    S = separation * np.asarray(X @ W.T) / np.sqrt(sparsity * n)
    P = np.exp(S - S.max(axis=1, keepdims=True))
    P /= P.sum(axis=1, keepdims=True)
    u = rng.random(M)[:, None]
    labels = np.minimum((u > np.cumsum(P, axis=1)).sum(axis=1), n_classes - 1)
    return Dataset(X, labels.astype(float), "multiclass",
                   note=f"synthetic-multinomial M={M} n={n} C={n_classes} seed={seed}")


def dataset_stats(d: Dataset) -> dict:
    """Counts and simple summaries; invariant under row permutation."""
    if d.M == 0:
        return {"M": 0, "n": d.n, "nnz": 0, "label_counts": {}, "max_abs": 0.0, "empty": True}
    values, counts = np.unique(d.labels, return_counts=True)
    label_counts = {(int(v) if v == int(v) else float(v)): int(c) for v, c in zip(values, counts)}
    return {
        "M": d.M,
        "n": d.n,
        "nnz": int(d.X.nnz),
        "label_counts": label_counts,
        "max_abs": float(np.max(np.abs(d.X.data))) if d.X.nnz else 0.0,
        "empty": False,
    }


def make_problem(d: Dataset, model: str, lam: float = 0.0, n_classes: int | None = None):
    """Wrap a dataset as a sum problem: binary-logistic, multinomial or least-squares."""
    if model == "binary-logistic":
        return BinaryLogistic(d.X, d.labels, lam)
    if model == "multinomial":
        return MultinomialLogistic(d.X, d.labels, n_classes, lam)
    if model == "least-squares":
        return LeastSquares(d.X, d.labels, lam)
    raise ValueError(f"unknown model {model!r}")
