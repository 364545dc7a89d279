import os
import sys

import numpy as np
import pytest
import scipy.sparse as sp

sys.path.insert(0, os.path.dirname(__file__))

from growsample.problems import BinaryLogistic, MultinomialLogistic, SyntheticQuadratic  # noqa: E402


@pytest.fixture
def two_term():
    """f1 = (x-1)^2/2, f2 = (x+1)^2/2 in one dimension."""
    return SyntheticQuadratic([1.0], [[1.0], [-1.0]])


@pytest.fixture
def small_logistic():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((30, 6)) * (rng.random((30, 6)) < 0.6)
    b = np.where(rng.random(30) < 0.5, -1.0, 1.0)
    return BinaryLogistic(sp.csr_matrix(A), b, lam=0.05)


@pytest.fixture
def small_multinomial():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((25, 5)) * (rng.random((25, 5)) < 0.7)
    labels = rng.integers(0, 3, size=25)
    return MultinomialLogistic(sp.csr_matrix(A), labels, 3, lam=0.02)
