"""Compiled inner loops for single-term stochastic passes."""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def logistic_sgd_steps(indptr, indices, data, labels, lam, x, order, steps):
    """In-place x <- x - a_t (grad f_i(x) + lam x) for binary log-loss rows."""
    for t in range(order.shape[0]):
        i = order[t]
        a = steps[t]
        lo = indptr[i]
        hi = indptr[i + 1]
        z = 0.0
        for p in range(lo, hi):
            z += data[p] * x[indices[p]]
        z *= labels[i]
        # sigma(-z), stable on both sides
        if z >= 0.0:
            e = math.exp(-z)
            s = e / (1.0 + e)
        else:
            s = 1.0 / (1.0 + math.exp(z))
        coef = -labels[i] * s
        if lam != 0.0:
            shrink = 1.0 - a * lam
            for j in range(x.shape[0]):
                x[j] *= shrink
        # lam*x already folded in; the data term uses the pre-step margin
        for p in range(lo, hi):
            x[indices[p]] -= a * coef * data[p]
    return x


def warmup():
    """Trigger compilation (cached on disk after the first call)."""
    logistic_sgd_steps(np.array([0, 1]), np.array([0]), np.array([1.0]), np.array([1.0]),
                       0.0, np.zeros(1), np.zeros(1, dtype=np.int64), np.zeros(1))
