"""Run-and-check recipes for the convergence bounds and the sampling identities.

Every recipe returns a :class:`SuiteReport` made of :class:`Check` records.  A
check's ``worst_margin`` is normalized so that a value >= 0 means the
inequality held everywhere; ``where`` points at the iteration (or probe) that
came closest to violating it.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data_io import generate_synthetic_logistic, make_problem
from .optimizers import (Budget, StepPolicy, Trace, run_controlled_error_gd,
                         run_deterministic_qn, run_hybrid_qn, run_sampled_gd,
                         run_stochastic_gd, solve_reference)
from .problems import SyntheticQuadratic, lipschitz_bound_logistic
from .sampling import (DETERMINISTIC_PREFIX, SampleSet, Schedule, deterministic_bound,
                       expected_residual_sq, residual, sample_variance)
from .theory import NoiseBoundSequence, certify_beta, fit_linear_rate, lemma_bound

__all__ = [
    "Check",
    "SuiteReport",
    "SUITES",
    "EXTRA_SUITES",
    "run_suite",
    "default_quadratic",
    "verify_lemma",
    "verify_strong",
    "verify_weak",
    "verify_strong_expected",
    "verify_sublinear",
    "verify_sampling_identity",
    "verify_deterministic_bound",
    "verify_geometric_schedule",
    "protocol_problem",
    "run_protocol",
    "verify_protocol",
]

_TINY = 1e-300


@dataclass
class Check:
    name: str
    passed: bool
    worst_margin: float
    where: object = None
    detail: str = ""


@dataclass
class SuiteReport:
    suite: str
    checks: list[Check] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"suite": self.suite, "passed": self.passed, "seconds": self.seconds,
                "checks": [asdict(c) for c in self.checks]}

    def lines(self) -> list[str]:
        out = []
        for c in self.checks:
            tag = "PASS" if c.passed else "FAIL"
            at = "" if c.where is None else f" at {c.where}"
            out.append(f"{tag} {self.suite}/{c.name}: worst margin {c.worst_margin:.3e}{at}"
                       + (f" ({c.detail})" if c.detail else ""))
        return out


def _worst(margins, labels=None) -> tuple[float, object]:
    margins = np.asarray(margins, dtype=float)
    if margins.size == 0:
        return math.inf, None
    j = int(np.argmin(margins))
    return float(margins[j]), (j if labels is None else labels[j])


def default_quadratic(n: int = 10, mu: float = 0.5, L: float = 2.0) -> SyntheticQuadratic:
    """Zero-centred quadratic, so x* = 0 and f* = 0 exactly (no round-off floor in the gap)."""
    return SyntheticQuadratic.make(n, mu, L)


def _start_point(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng([seed, 7]).standard_normal(n)


# ---------------------------------------------------------------------------
# inexact-gradient descent
# ---------------------------------------------------------------------------

LEMMA_NOISE = (
    ("constant", NoiseBoundSequence("polynomial", B0=0.25, power=0.0), "exact-norm"),
    ("geometric", NoiseBoundSequence("geometric", B0=1.0, gamma=0.97), "expectation"),
    ("polynomial-biased", NoiseBoundSequence("polynomial", B0=1.0, power=1.0), "biased"),
    ("gap-proportional", NoiseBoundSequence("strong-rate", rho=0.0), "exact-norm"),
)


def verify_lemma(iters: int = 500, seed: int = 0, tol: float = 1e-12) -> SuiteReport:
    """gap_{k+1} <= (1 - mu/L) gap_k + ||e_k||^2/(2L) on every iteration, for several noise laws."""
    p = default_quadratic()
    mu, L = p.constants.mu, p.constants.L
    report = SuiteReport("lemma")
    for name, noise, mode in LEMMA_NOISE:
        tr = run_controlled_error_gd(p, _start_point(p.n, seed), noise, Budget(max_iters=iters),
                                     seed=seed, noise_mode=mode)
        gaps, err = tr.column("gap"), tr.column("err_sq")
        bound = np.array([lemma_bound(gaps[k], err[k + 1], mu, L) for k in range(iters)])
        margin, at = _worst((bound - gaps[1:]) / np.maximum(bound, _TINY))
        report.checks.append(Check(f"one-step-bound[{name}]", margin >= -tol, margin,
                                   None if at is None else at + 1,
                                   f"{iters} iterations, {mode} noise"))
    return report


def verify_strong(seeds=range(5), iters: int = 300, rho_fraction: float = 0.5,
                  tol: float = 1e-12) -> SuiteReport:
    """With B_k = 2L(mu/L - rho) gap_k the gap contracts by (1 - rho) every iteration."""
    p = default_quadratic()
    mu, L = p.constants.mu, p.constants.L
    rho = rho_fraction * mu / L
    noise = NoiseBoundSequence("strong-rate", rho=rho)
    report = SuiteReport("strong")
    margins, where, ratios = [], [], []
    for seed in seeds:
        tr = run_controlled_error_gd(p, _start_point(p.n, seed), noise, Budget(max_iters=iters),
                                     seed=seed)
        g = tr.column("gap")
        margins.append(((1 - rho) * g[:-1] - g[1:]) / np.maximum(g[:-1], _TINY))
        where += [(seed, k + 1) for k in range(iters)]
        ratios.append(np.max(g[1:] / np.maximum(g[:-1], _TINY)))
    margin, at = _worst(np.concatenate(margins), where)
    report.checks.append(Check("per-iteration-contraction", margin >= -tol, margin, at,
                               f"rho={rho:g}, max ratio {max(ratios):.6f} vs {1 - rho:.6f}"))
    return report


def verify_weak(gammas=(0.7, 0.9), iters: int = 500, B0: float = 0.25, seed: int = 0,
                slack: float = 0.02) -> SuiteReport:
    """With B_k = B0 gamma^k the fitted late-run factor stays below max(gamma, 1 - mu/L) + slack."""
    p = default_quadratic()
    mu, L = p.constants.mu, p.constants.L
    report = SuiteReport("weak")
    for gamma in gammas:
        noise = NoiseBoundSequence("geometric", B0=B0, gamma=gamma)
        tr = run_controlled_error_gd(p, _start_point(p.n, seed), noise, Budget(max_iters=iters),
                                     seed=seed)
        est = fit_linear_rate(tr.column("gap"), range(iters // 2, iters + 1))
        limit = max(gamma, 1 - mu / L) + slack
        report.checks.append(Check(f"fitted-rate[gamma={gamma:g}]", est.sigma_hat <= limit,
                                   limit - est.sigma_hat, est.window,
                                   f"sigma_hat={est.sigma_hat:.5f}, limit {limit:.5f}"))
    return report


def verify_strong_expected(n_seeds: int = 200, iters: int = 100, rho_fraction: float = 0.5,
                           n_se: float = 3.0) -> SuiteReport:
    """Mean over seeded runs: mean gap_{k+1} <= (1 - rho) mean gap_k + n_se standard errors.

    Noise norms are random with E||e_k||^2 = 2L(mu/L - rho) gap_k; all runs
    start from the same point.  The standard error is that of the paired
    differences gap_{k+1} - (1 - rho) gap_k.
    """
    p = default_quadratic()
    mu, L = p.constants.mu, p.constants.L
    rho = rho_fraction * mu / L
    noise = NoiseBoundSequence("strong-rate", rho=rho)
    x0 = _start_point(p.n, 0)
    G = np.empty((n_seeds, iters + 1))
    for j in range(n_seeds):
        tr = run_controlled_error_gd(p, x0, noise, Budget(max_iters=iters), seed=j,
                                     noise_mode="expectation")
        G[j] = tr.column("gap")
    diff = G[:, 1:] - (1 - rho) * G[:, :-1]
    se = diff.std(axis=0, ddof=1) / math.sqrt(n_seeds)
    scale = G[:, :-1].mean(axis=0)
    margin, at = _worst((n_se * se - diff.mean(axis=0)) / np.maximum(scale, _TINY))
    contraction = G[:, 1:].mean(axis=0) / G[:, :-1].mean(axis=0)
    report = SuiteReport("strong-expected")
    report.checks.append(Check("mean-contraction", margin >= 0, margin,
                               None if at is None else at + 1,
                               f"{n_seeds} seeds, worst mean ratio {contraction.max():.4f} "
                               f"vs {1 - rho:.4f}"))
    return report


def flat_quadratic() -> SyntheticQuadratic:
    """One zero-curvature direction plus curvatures spread over three decades; f* = 0."""
    d = np.array([0.0, 1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3, 1.0])
    return SyntheticQuadratic(d, np.zeros((1, d.size)))


def verify_sublinear(iters: int = 1000, start: int = 10, decade: int = 100,
                     max_change: float = 0.2, seed: int = 0) -> SuiteReport:
    """||e_k|| = 1/k^2 on a convex problem with a flat direction: k * gap(x_bar_k) stays bounded.

    The running supremum S(k) = sup_{start<=j<=k} j gap(x_bar_j) must be finite
    and change by less than ``max_change`` (relative) between k = ``decade``
    and k = ``iters``.
    """
    p = flat_quadratic()
    noise = NoiseBoundSequence("summable", B0=1.0, power=2.0)
    tr = run_controlled_error_gd(p, np.ones(p.n), noise, Budget(max_iters=iters), seed=seed,
                                 L=p.constants.L, mu=p.constants.mu, track_average=True)
    avg = tr.column("avg_gap")[1:]
    k = np.arange(1, iters + 1, dtype=float)
    sup = np.maximum.accumulate((k * avg)[start - 1:])
    s_lo, s_hi = sup[decade - start], sup[-1]
    finite = bool(np.all(np.isfinite(sup)))
    change = (s_hi - s_lo) / max(s_hi, _TINY)
    report = SuiteReport("sublinear")
    report.checks.append(Check("bounded-k-gap", finite and change < max_change,
                               max_change - change if finite else -math.inf, (decade, iters),
                               f"sup k*gap = {s_lo:.6g} at k={decade}, {s_hi:.6g} at k={iters}"))
    return report


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def verify_sampling_identity(Ms=range(2, 9), n: int = 3, seed: int = 0,
                             rtol: float = 1e-10) -> SuiteReport:
    """Average of ||e||^2 over every b-subset equals ((M-b)/M) S / b, for every M and b."""
    worst_rel, at = 0.0, None
    for M in Ms:
        rng = np.random.default_rng([seed, M])
        p = SyntheticQuadratic(rng.uniform(0.5, 2.0, n), rng.standard_normal((M, n)))
        x = rng.standard_normal(n)
        S = sample_variance(p, x)
        for b in range(1, M + 1):
            sq = [float(e @ e) for e in
                  (residual(p, x, SampleSet(np.array(c), M)) for c in
                   itertools.combinations(range(M), b))]
            mean = float(np.mean(sq))
            want = expected_residual_sq(S, M, b)
            rel = abs(mean - want) / max(abs(want), _TINY) if want or mean else 0.0
            if at is None or rel > worst_rel:
                worst_rel, at = rel, (M, b)
    report = SuiteReport("sampling")
    report.checks.append(Check("uniform-without-replacement-mean", worst_rel <= rtol,
                               1.0 - worst_rel / rtol, at,
                               f"all subsets enumerated, max relative error {worst_rel:.2e}"))
    return report


def _subset_means(D: np.ndarray, ranks: np.ndarray) -> np.ndarray:
    """E[c, b-1] = mean of the rows of D whose rank in column c is < b, for b = 1..M-1."""
    M = D.shape[0]
    sizes = np.arange(1, M)
    mask = ranks[:, :, None] < sizes[None, None, :]            # (C, M, M-1)
    return np.einsum("cib,ij->cbj", mask, D) / sizes[None, :, None]


def _worst_residuals(D: np.ndarray, rng, n_random: int, n_dirs: int, refine: int = 4):
    """Largest ||mean_B D||^2 per size b over random and greedy subsets.

    Greedy subsets take the b rows with the largest projection on a direction;
    each direction is then replaced by the residual it produced and the
    selection repeated, which climbs toward the worst case for every b.
    """
    M, n = D.shape
    perms = np.argsort(rng.random((n_random, M)), axis=1)
    worst = np.max(np.sum(_subset_means(D, perms) ** 2, axis=2), axis=0)
    _, _, vt = np.linalg.svd(D, full_matrices=False)
    dirs = np.vstack([vt[:n_dirs], -vt[:n_dirs], rng.standard_normal((n_dirs, n))])
    U = np.repeat(dirs[:, None, :], M - 1, axis=1)               # (C, M-1, n)
    for _ in range(refine + 1):
        scores = np.einsum("ij,cbj->cbi", D, U)                   # (C, M-1, M)
        ranks = np.argsort(np.argsort(-scores, axis=2, kind="stable"), axis=2)
        sizes = np.arange(1, M)
        mask = ranks < sizes[None, :, None]
        E = np.einsum("cbi,ij->cbj", mask, D) / sizes[None, :, None]
        sq = np.sum(E * E, axis=2)
        worst = np.maximum(worst, sq.max(axis=0))
        nrm = np.sqrt(sq)[:, :, None]
        U = np.where(nrm > 0, E / np.where(nrm > 0, nrm, 1.0), U)
    return worst


def verify_deterministic_bound(M: int = 64, n: int = 5, lam: float = 0.1, n_probes: int = 20,
                               seed: int = 0, n_random: int = 20, n_dirs: int = 3) -> SuiteReport:
    """Every sampled residual obeys ||e||^2 <= 4((M-b)/M)^2 (beta1 + 2 beta2 L gap).

    (beta1, beta2) are certified at the probes themselves.  Subsets cannot be
    enumerated at this M, so each (probe, b) is checked on random subsets and on
    greedy subsets built to maximize ||e||.
    """
    d = generate_synthetic_logistic(M, n, seed=seed, separation=2.0)
    p = make_problem(d, "binary-logistic", lam)
    L = lipschitz_bound_logistic(p.A, lam)
    x_star, f_star = solve_reference(p)
    rng = np.random.default_rng([seed, 3])
    probes = [x_star + rng.standard_normal(n) * s for s in np.geomspace(0.01, 3.0, n_probes)]
    beta1, beta2 = certify_beta(p, probes)
    worst, at = math.inf, None
    for j, x in enumerate(probes):
        G = p.term_gradients(x, np.arange(M))
        D = G - G.mean(axis=0)
        gap = max(p.full_value(x) - f_star, 0.0)
        bound = np.array([deterministic_bound(M, b, beta1, beta2, L, gap) for b in range(1, M)])
        m, b_at = _worst((bound - _worst_residuals(D, rng, n_random, n_dirs)) / bound,
                         list(range(1, M)))
        if m < worst:
            worst, at = m, (j, b_at)
        # the library residual agrees with the direct computation
        B = np.sort(rng.choice(M, M // 2, replace=False))
        e_lib = residual(p, x, SampleSet(B, M))
        if not np.allclose(e_lib, D[B].mean(axis=0), rtol=1e-10, atol=1e-14):
            raise ArithmeticError("residual routes disagree")
    report = SuiteReport("deterministic-bound")
    report.checks.append(Check("worst-case-residual", worst >= 0, worst, at,
                               f"beta1={beta1:.4g}, beta2={beta2:g}, L={L:.4g}"))
    return report


def verify_geometric_schedule(M: int = 1000, n: int = 20, lam: float = 0.1, gamma: float = 0.9,
                              iters: int = 400, seed: int = 0, gap_target: float = 1e-6
                              ) -> SuiteReport:
    """Step 1/L on prefix samples sized by the deterministic geometric rule converges linearly.

    The rate is fitted on the second half of the iterations whose gap is still
    above the round-off floor 100 eps gap_0.
    """
    d = generate_synthetic_logistic(M, n, seed=seed)
    p = make_problem(d, "binary-logistic", lam)
    L = lipschitz_bound_logistic(p.A, lam)
    _, f_star = solve_reference(p)
    tr = run_sampled_gd(p, np.zeros(n), Schedule("geometric-deterministic", gamma=gamma),
                        Budget(max_iters=iters), L=L, sampling=DETERMINISTIC_PREFIX,
                        f_star=f_star)
    gaps = tr.column("gap")
    floor = 1e2 * np.finfo(float).eps * gaps[0]
    above = np.flatnonzero(gaps > floor)
    last = int(above.max())
    window = [k for k in range(last // 2, last + 1) if gaps[k] > floor]
    est = fit_linear_rate(gaps, window)
    final = float(gaps[-1])
    report = SuiteReport("geometric-schedule")
    report.checks.append(Check("linear-tail", est.sigma_hat < 1.0, 1.0 - est.sigma_hat,
                               est.window, f"sigma_hat={est.sigma_hat:.5f}"))
    report.checks.append(Check("final-gap", final < gap_target,
                               (gap_target - final) / gap_target, iters,
                               f"gap={final:.3e} after {iters} iterations, "
                               f"full batch from k={int(np.argmax(tr.column('batch_size') == M))}"))
    return report


# ---------------------------------------------------------------------------
# protocol reproduction on a synthetic logistic problem
# ---------------------------------------------------------------------------

PROTOCOL = dict(M=10_000, n=50, lam=0.01, sparsity=0.2, separation=3.0, scale_range=30.0,
                data_seed=0, seed=0, passes=50.0, early_passes=2.0,
                steps=tuple(10.0 ** -e for e in range(7)))


def protocol_problem(M=PROTOCOL["M"], n=PROTOCOL["n"], lam=PROTOCOL["lam"],
                     sparsity=PROTOCOL["sparsity"], separation=PROTOCOL["separation"],
                     scale_range=PROTOCOL["scale_range"], data_seed=PROTOCOL["data_seed"]):
    """Sparse, ill-conditioned synthetic logistic regression (column scales over 1..30)."""
    d = generate_synthetic_logistic(M, n, sparsity, seed=data_seed, separation=separation,
                                    scale_range=scale_range)
    return make_problem(d, "binary-logistic", lam)


def run_protocol(p=None, seed: int = PROTOCOL["seed"], passes: float = PROTOCOL["passes"],
                 steps=PROTOCOL["steps"]) -> dict[str, Trace]:
    """Deterministic L-BFGS, the nested-sample hybrid and constant-step SGD over a step grid.

    Gaps use f* = the lower of a tight reference solve and every value seen.
    """
    p = protocol_problem() if p is None else p
    x0 = np.zeros(p.n)
    _, f_ref = solve_reference(p)
    budget = Budget(max_passes=passes)
    runs = {
        "deterministic-qn": run_deterministic_qn(p, x0, budget, policy="every-iteration",
                                                 f_star=f_ref),
        "hybrid-qn": run_hybrid_qn(p, x0, Schedule("paper-linear"), budget, seed=seed,
                                   nested=True, policy="every-iteration", f_star=f_ref),
    }
    for a in steps:
        runs[f"stochastic-gd[{a:g}]"] = run_stochastic_gd(p, x0, StepPolicy("constant", a),
                                                          budget, seed=seed, f_star=f_ref)
    f_best = min([f_ref] + [float(np.nanmin(t.column("f_true"))) for t in runs.values()])
    for t in runs.values():
        t.meta["f_star"] = f_best
        for r in t.records:
            if not math.isnan(r.f_true):
                r.gap = r.f_true - f_best
    return runs


def verify_protocol(runs: dict[str, Trace] | None = None, early: float = PROTOCOL["early_passes"],
                    late: float = PROTOCOL["passes"], late_ratio: float = 1.05,
                    sgd_factor: float = 10.0) -> SuiteReport:
    """Hybrid ahead early, level with L-BFGS late, well ahead of the best constant-step SGD.

    Also checks that once the sample is the whole set, every hybrid iteration
    lowers the true objective.
    """
    runs = run_protocol() if runs is None else runs
    det, hyb = runs["deterministic-qn"], runs["hybrid-qn"]
    sgd = {k: t for k, t in runs.items() if k.startswith("stochastic-gd")}
    report = SuiteReport("protocol")
    d_early, h_early = det.at_passes(early), hyb.at_passes(early)
    report.checks.append(Check("early-gap", h_early <= d_early,
                               (d_early - h_early) / max(d_early, _TINY), early,
                               f"hybrid {h_early:.3e} vs deterministic {d_early:.3e}"))
    d_late, h_late = det.at_passes(late), hyb.at_passes(late)
    report.checks.append(Check("late-gap", h_late <= late_ratio * d_late,
                               (late_ratio * d_late - h_late) / max(d_late, _TINY), late,
                               f"hybrid {h_late:.3e} vs deterministic {d_late:.3e}"))
    finals = {k: t.at_passes(late) for k, t in sgd.items()}
    finals = {k: (math.inf if not math.isfinite(v) else v) for k, v in finals.items()}
    best = min(finals, key=finals.get)
    report.checks.append(Check("stochastic-gap", finals[best] >= sgd_factor * h_late,
                               (finals[best] - sgd_factor * h_late) / max(finals[best], _TINY),
                               best, f"best {best} {finals[best]:.3e} vs hybrid {h_late:.3e}"))
    M = hyb.M
    drops = [(hyb[j - 1].f_true - hyb[j].f_true, hyb[j].k) for j in range(1, len(hyb))
             if hyb[j].batch_size == M]
    if drops:
        margin, at = min(drops)
        scale = abs(hyb[0].f_true)
        report.checks.append(Check("full-batch-monotone", margin > 0, margin / scale, at,
                                   f"{len(drops)} full-batch iterations"))
    else:
        report.checks.append(Check("full-batch-monotone", False, -math.inf, None,
                                   "sample never reached the full set"))
    return report


# ---------------------------------------------------------------------------

SUITES = {
    "lemma": verify_lemma,
    "weak": verify_weak,
    "strong": verify_strong,
    "strong-expected": verify_strong_expected,
    "sublinear": verify_sublinear,
    "sampling": verify_sampling_identity,
}

EXTRA_SUITES = {
    "deterministic-bound": verify_deterministic_bound,
    "geometric-schedule": verify_geometric_schedule,
    "protocol": verify_protocol,
}


def run_suite(name: str, **kwargs) -> SuiteReport:
    table = {**SUITES, **EXTRA_SUITES}
    if name not in table:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(table)}")
    t0 = time.perf_counter()
    report = table[name](**kwargs)
    report.seconds = time.perf_counter() - t0
    return report
