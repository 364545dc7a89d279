import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from growsample.optimizers import Budget, run_controlled_error_gd, run_deterministic_qn
from growsample.problems import SyntheticQuadratic
from growsample.theory import (
    NoiseBoundSequence,
    certify_beta,
    check_sublinear,
    fit_linear_rate,
    inject_noise,
    lemma_bound,
    pi_gradient_heuristic,
    pi_step_heuristic,
    strong_rate_noise_bound,
)


def test_lemma_bound_examples():
    assert lemma_bound(5.0, 2.0, 1.0, 1.0) == 1.0
    assert lemma_bound(4.0, 0.0, 1.0, 2.0) == 2.0


def test_lemma_bound_holds_along_noisy_run():
    p = SyntheticQuadratic.make(10, 0.5, 2.0)
    x0 = np.random.default_rng(0).standard_normal(10)
    tr = run_controlled_error_gd(p, x0, NoiseBoundSequence("polynomial", B0=0.5, power=1.0),
                                 Budget(max_iters=200), seed=3)
    gaps, err = tr.column("gap"), tr.column("err_sq")
    for k in range(1, len(tr)):
        assert gaps[k] <= lemma_bound(gaps[k - 1], err[k], 0.5, 2.0) * (1 + 1e-12)


def test_strong_rate_noise_bound_examples():
    assert strong_rate_noise_bound(4.0, 1.0, 2.0, 0.25) == 4.0
    assert strong_rate_noise_bound(0.0, 1.0, 2.0, 0.25) == 0.0
    assert strong_rate_noise_bound(7.0, 1.0, 2.0, 0.5) == 0.0
    with pytest.raises(ValueError):
        strong_rate_noise_bound(1.0, 1.0, 2.0, 0.6)


def test_pi_heuristic_examples():
    assert pi_gradient_heuristic(2.0, 1.0, 2.0) == 0.5
    assert pi_gradient_heuristic(0.0, 1.0, 2.0) == 0.0
    assert pi_step_heuristic(1.0, 8.0) == 1.0
    assert pi_step_heuristic(0.0, 8.0) == 0.0


def test_pi_heuristics_are_lower_bounds_on_exact_runs():
    p = SyntheticQuadratic.make(10, 0.5, 2.0, M=3, spread=1.0, seed=1)
    mu, L = p.constants.mu, p.constants.L
    x = p.constants.x_star + np.random.default_rng(2).standard_normal(10)
    dist = np.linalg.norm(x - p.constants.x_star)
    for _ in range(60):
        g = p.full_gradient(x)
        gap = p.gap(x)
        x_new = x - g / L
        new_dist = np.linalg.norm(x_new - p.constants.x_star)
        assert new_dist <= dist
        assert pi_gradient_heuristic(np.linalg.norm(g), mu, L) <= gap
        assert pi_step_heuristic(np.linalg.norm(x - x_new), mu) <= gap
        x, dist = x_new, new_dist


@given(st.integers(0, 5000))
@settings(max_examples=40, deadline=None)
def test_gradient_heuristic_lower_bound_at_random_points(seed):
    rng = np.random.default_rng(seed)
    p = SyntheticQuadratic(rng.uniform(0.1, 5.0, 6), rng.standard_normal((2, 6)))
    x = rng.standard_normal(6) * 3
    g = p.full_gradient(x)
    assert pi_gradient_heuristic(np.linalg.norm(g), p.constants.mu, p.constants.L) <= p.gap(x) * (1 + 1e-12)


def test_noise_sequences():
    geo = NoiseBoundSequence("geometric", B0=2.0, gamma=0.5)
    assert [geo(k) for k in range(4)] == [2.0, 1.0, 0.5, 0.25]
    assert NoiseBoundSequence("summable", B0=1.0, power=2.0)(1) == 1 / 16
    assert NoiseBoundSequence("zero")(9) == 0.0
    sr = NoiseBoundSequence("strong-rate", rho=0.25)
    assert sr(0, gap=4.0, mu=1.0, L=2.0) == 4.0
    assert NoiseBoundSequence("strong-rate", rho=0.25, pi_source="gradient")(
        0, g_norm=2.0, mu=1.0, L=2.0) == strong_rate_noise_bound(0.5, 1.0, 2.0, 0.25)
    with pytest.raises(ValueError):
        NoiseBoundSequence("summable", B0=1.0, power=1.0)
    with pytest.raises(ValueError):
        NoiseBoundSequence("geometric", B0=-1.0)
    with pytest.raises(ValueError):
        sr(0, gap=1.0)


@given(st.floats(0.01, 1.0), st.integers(0, 50))
def test_geometric_ratio_is_exact(gamma, k):
    geo = NoiseBoundSequence("geometric", B0=1.0, gamma=gamma)
    assert geo(k + 1) == pytest.approx(gamma * geo(k), rel=1e-14)


# --- certify_beta --------------------------------------------------------

def test_certify_beta_identical_terms():
    p = SyntheticQuadratic([1.0, 3.0], np.ones((5, 2)))
    assert certify_beta(p, [np.array([0.5, -2.0]), np.zeros(2)]) == (0.0, 1.0)


def test_certify_beta_two_term(two_term):
    beta1, beta2 = certify_beta(two_term, [np.zeros(1)])
    assert beta1 >= 1.0


def test_certify_beta_holds_on_fresh_probes(small_logistic):
    p = small_logistic
    rng = np.random.default_rng(0)
    beta1, beta2 = certify_beta(p, [rng.standard_normal(p.n) for _ in range(200)])
    violations = 0
    for _ in range(100):
        x = rng.standard_normal(p.n) * 0.5
        G = p.term_gradients(x, np.arange(p.M)) + p.lam * x
        g = p.full_gradient(x)
        violations += int(np.max(np.sum(G * G, axis=1)) > beta1 + beta2 * g @ g)
    assert violations == 0


def test_certify_beta_needs_probes(two_term):
    with pytest.raises(ValueError):
        certify_beta(two_term, [])


# --- inject_noise --------------------------------------------------------

def test_inject_noise_zero_and_exact_norm():
    assert np.all(inject_noise(0.0, 5, 1, 2) == 0.0)
    e = inject_noise(4.0, 7, seed=1, k=3)
    assert abs(np.linalg.norm(e) - 2.0) < 1e-12


@given(st.floats(1e-8, 1e6), st.integers(1, 30), st.integers(0, 1000), st.integers(0, 1000))
def test_exact_norm_property(B, n, seed, k):
    e = inject_noise(B, n, seed, k)
    assert e @ e == pytest.approx(B, rel=1e-12)
    assert np.array_equal(e, inject_noise(B, n, seed, k))


def test_expectation_mode_mean():
    draws = [inject_noise(1.0, 4, seed=5, k=k, mode="expectation") for k in range(100_000)]
    assert abs(np.mean([e @ e for e in draws]) - 1.0) < 0.01


def test_biased_mode_keeps_direction():
    a = inject_noise(1.0, 3, seed=2, k=0, mode="biased")
    b = inject_noise(9.0, 3, seed=2, k=5, mode="biased")
    np.testing.assert_allclose(b, 3 * a, rtol=1e-14)


# --- rate fits -----------------------------------------------------------

def test_fit_linear_rate_examples():
    k = np.arange(100)
    assert abs(fit_linear_rate(0.9 ** k, range(100)).sigma_hat - 0.9) < 1e-6
    assert fit_linear_rate(np.full(50, 3.0), range(50)).sigma_hat == pytest.approx(1.0, abs=1e-12)
    jitter = 1 + 1e-3 * np.random.default_rng(0).standard_normal(100)
    est = fit_linear_rate(0.5 * 0.8 ** k * jitter, range(100))
    assert 0.79 <= est.sigma_hat <= 0.81


def test_fit_linear_rate_rejects_nonpositive_gap():
    with pytest.raises(ValueError):
        fit_linear_rate([1.0, 0.5, 0.0, 0.1], range(4))


def test_fit_default_window_skips_roundoff_floor():
    gaps = np.concatenate([0.5 ** np.arange(40), np.zeros(20)])
    est = fit_linear_rate(gaps)
    assert est.window == (30, 39) and est.points == 10
    assert est.sigma_hat == pytest.approx(0.5, rel=1e-12)
    with pytest.raises(ValueError, match="fewer than two"):
        fit_linear_rate([1.0] * 10 + [1e-20] + [0.0] * 9)


def test_check_sublinear_examples():
    k = np.arange(1, 101, dtype=float)
    assert check_sublinear(1 / k) == pytest.approx(1.0)
    assert check_sublinear(1 / k ** 2) == 1.0


def test_exact_run_contracts_by_one_minus_mu_over_L():
    p = SyntheticQuadratic.make(10, 0.5, 1.0)
    x0 = np.random.default_rng(1).standard_normal(10)
    gaps = run_controlled_error_gd(p, x0, NoiseBoundSequence("zero"), Budget(max_iters=60)).column("gap")
    pos = gaps[:-1] > 0
    assert np.all(gaps[1:][pos] <= 0.5 * gaps[:-1][pos] * (1 + 1e-12))


def test_deterministic_lbfgs_wolfe_reaches_tiny_gap():
    p = SyntheticQuadratic.make(10, 0.5, 2.0, M=4, spread=1.0, seed=3)
    tr = run_deterministic_qn(p, np.ones(10) * 3, Budget(max_iters=50))
    assert tr.last.gap < 1e-10
    assert not math.isnan(tr.last.gap)
