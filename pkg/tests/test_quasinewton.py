import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from growsample.quasinewton import (
    SATISFIED,
    STEP_UNDERFLOW,
    LbfgsMemory,
    LineSearchError,
    armijo_search,
    shanno_phua_scale,
    wolfe_search,
)
from oracles import dense_bfgs_inverse, dense_bfgs_update, rel_err


# --- memory --------------------------------------------------------------

def test_push_pair_rules():
    mem = LbfgsMemory(2)
    assert mem.push_pair([1.0, 0.0], [1.0, 0.0])
    assert not mem.push_pair([1.0, 0.0], [-1.0, 0.0])
    assert not mem.push_pair([1.0, 0.0], [0.0, 1.0])
    assert len(mem) == 1


def test_ring_evicts_oldest():
    mem = LbfgsMemory(2)
    for j in range(3):
        assert mem.push_pair([1.0 + j, 0.0], [1.0, 0.0])
    assert [p[0][0] for p in mem.pairs] == [2.0, 3.0]


def test_empty_memory_gives_steepest_descent():
    g = np.array([0.3, -2.0, 1.0])
    np.testing.assert_array_equal(LbfgsMemory().direction(g), -g)


def test_single_pair_s_equals_y_preserves_identity():
    mem = LbfgsMemory(5)
    s = np.array([0.6, -0.8])
    mem.push_pair(s, s)
    g = np.array([1.5, 0.25])
    np.testing.assert_allclose(mem.direction(g), -g, rtol=1e-14)
    np.testing.assert_allclose(dense_bfgs_update(np.eye(2), s, s) @ g, g, rtol=1e-14)


def _bfgs_run(D, x, iters, scaling):
    """Steepest-then-quasi-Newton steps on f = x^T D x / 2 yielding (memory, pairs, g)."""
    mem = LbfgsMemory(capacity=iters + 1, scaling=scaling)
    pairs = []
    H_parallel = np.eye(len(x))
    for _ in range(iters):
        g = D @ x
        yield mem, pairs, g, H_parallel
        d = mem.direction(g)
        a = -(g @ d) / (d @ D @ d)  # exact line search
        x_new = x + a * d
        s, y = x_new - x, D @ x_new - g
        if mem.push_pair(s, y):
            pairs.append((s, y))
            H_parallel = dense_bfgs_update(H_parallel, s, y)
        x = x_new


def test_two_loop_matches_dense_bfgs_on_3d_quadratic():
    D = np.diag([1.0, 4.0, 9.0])
    x0 = np.array([1.0, -2.0, 0.5])
    for mem, pairs, g, _ in _bfgs_run(D, x0, 3, "shanno-phua"):
        if np.linalg.norm(g) < 1e-12:
            break
        gamma = 1.0 if not pairs else shanno_phua_scale(*pairs[-1])
        H = dense_bfgs_inverse(pairs, gamma * np.eye(3))
        assert rel_err(mem.direction(g), -H @ g) < 1e-8


@pytest.mark.parametrize("n", [5, 10, 20])
def test_identity_scaled_two_loop_matches_parallel_dense_bfgs(n):
    rng = np.random.default_rng(n)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    D = Q @ np.diag(np.linspace(0.5, 5.0, n)) @ Q.T
    for mem, pairs, g, H in _bfgs_run(D, rng.standard_normal(n), n, "identity"):
        if np.linalg.norm(g) < 1e-10:
            break
        assert rel_err(mem.direction(g), -H @ g) < 1e-8


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_direction_is_descent(seed):
    rng = np.random.default_rng(seed)
    mem = LbfgsMemory(5)
    for _ in range(8):
        s = rng.standard_normal(6)
        mem.push_pair(s, rng.standard_normal(6))
    for s, y, rho in mem.pairs:
        assert s @ y > 0 and rho > 0
    g = rng.standard_normal(6)
    assert g @ mem.direction(g) < 0


def test_shanno_phua_examples():
    assert shanno_phua_scale([1.0, 0.0], [2.0, 0.0]) == 0.5
    assert shanno_phua_scale([0.3, 0.4], [0.3, 0.4]) == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(ValueError):
        shanno_phua_scale([1.0, 0.0], [-1.0, 0.0])


@given(st.integers(0, 10_000))
@settings(max_examples=50)
def test_shanno_phua_sandwich(seed):
    rng = np.random.default_rng(seed)
    d = rng.uniform(0.1, 10.0, 5)
    s = rng.standard_normal(5)
    gamma = shanno_phua_scale(s, d * s)
    assert 1 / d.max() * (1 - 1e-12) <= gamma <= 1 / d.min() * (1 + 1e-12)


def test_memory_validation():
    with pytest.raises(ValueError):
        LbfgsMemory(0)
    with pytest.raises(ValueError):
        LbfgsMemory(3, scaling="diag")
    with pytest.raises(ValueError):
        LbfgsMemory().push_pair([1.0], [1.0, 2.0])


# --- Armijo --------------------------------------------------------------

def test_armijo_quadratic_example():
    phi = lambda a: (1 - 2 * a) ** 2
    res = armijo_search(phi, 1.0, -4.0, 1.0, 1e-4)
    assert res.status == SATISFIED and res.evaluations >= 2
    assert 0 < res.step < 1
    assert phi(res.step) < 1 - 4e-4 * res.step
    assert res.value == phi(res.step)


def test_armijo_accepts_first_trial_on_linear():
    res = armijo_search(lambda a: 1 - a, 1.0, -1.0, 2.0)
    assert res.step == 2.0 and res.evaluations == 1


def test_armijo_errors_and_underflow():
    with pytest.raises(LineSearchError):
        armijo_search(lambda a: a, 0.0, 0.0)
    with pytest.raises(ValueError):
        armijo_search(lambda a: -a, 0.0, -1.0, eta=1.5)
    res = armijo_search(lambda a: 1.0, 1.0, -1.0, 1.0)
    assert res.status != SATISFIED
    res = armijo_search(lambda a: 1.0, 1.0, -1.0, 1e-15)
    assert res.status == STEP_UNDERFLOW


def test_armijo_backtracks_through_nonfinite_values():
    phi = lambda a: math.inf if a > 0.5 else (1 - a) ** 2
    res = armijo_search(phi, 1.0, -2.0, 1.0)
    assert res.status == SATISFIED and res.step <= 0.5


@given(st.floats(0.1, 50), st.floats(-3, 3), st.floats(1e-3, 10), st.floats(1e-6, 0.5))
@settings(max_examples=100)
def test_armijo_postcondition_replay(curv, shift, alpha0, eta):
    phi = lambda a: curv * (a - 1) ** 2 + shift * math.sin(5 * a) * a * a
    phi0 = phi(0.0)
    dphi0 = -2 * curv
    res = armijo_search(phi, phi0, dphi0, alpha0, eta)
    if res.status == SATISFIED:
        assert phi(res.step) < phi0 + eta * res.step * dphi0
        assert res.evaluations <= 51


# --- Wolfe ---------------------------------------------------------------

def _quad(a):
    return 0.5 * (a - 1) ** 2, a - 1


def test_wolfe_accepts_exact_minimizer():
    res = wolfe_search(_quad, 0.5, -1.0, 1.0)
    assert res.status == SATISFIED and res.step == 1.0 and res.evaluations == 1


def _replay_wolfe(phi, alpha0, c1=1e-4, c2=0.9):
    f0, d0 = phi(0.0)
    res = wolfe_search(phi, f0, d0, alpha0, c1, c2)
    if res.status == SATISFIED:
        fa, da = phi(res.step)
        assert fa <= f0 + c1 * res.step * d0
        assert abs(da) <= c2 * abs(d0)
    return res


def test_wolfe_on_steep_exponential():
    phi = lambda a: (math.exp(4 * a) - 8 * a, 4 * math.exp(4 * a) - 8)
    for a0 in (1e-3, 0.1, 1.0, 5.0):
        assert _replay_wolfe(phi, a0).status == SATISFIED


@given(st.floats(1.5, 20), st.floats(1e-3, 50), st.floats(0.1, 0.99))
@settings(max_examples=100)
def test_wolfe_postcondition_replay(scale, alpha0, c2):
    # softplus(scale (a - 2)) - a: bounded below because scale > 1
    phi = lambda a: (float(np.logaddexp(0.0, scale * (a - 2))) - a,
                     scale * float(expit(scale * (a - 2))) - 1)
    res = _replay_wolfe(phi, alpha0, 1e-4, c2)
    assert res.evaluations <= 25


def test_wolfe_errors():
    with pytest.raises(LineSearchError):
        wolfe_search(_quad, 0.5, 1.0)
    with pytest.raises(ValueError):
        wolfe_search(_quad, 0.5, -1.0, c1=0.5, c2=0.4)
