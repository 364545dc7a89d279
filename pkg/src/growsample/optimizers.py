"""Iteration drivers and the per-iteration trace.

Four methods share one trace format:

* ``run_controlled_error_gd`` -- x <- x - (grad f(x) + e_k)/L with injected errors
  of prescribed size (the engine behind the rate checks);
* ``run_stochastic_gd`` -- single-term steps with constant or 1/t step sizes;
* ``run_hybrid_qn`` -- growing samples, L-BFGS directions and an Armijo search on the
  sampled objective;
* ``run_deterministic_qn`` -- full-batch L-BFGS with a strong Wolfe search.

``run_sampled_gd`` (fixed step 1/L on a growing sample) covers the sampled
counterpart of the controlled-error engine.

Cost is counted in term evaluations (one value+gradient of one f_i).  Records
carry ``ls_evals`` line-search trials on a batch of ``batch_size`` terms plus
``base_evals`` term evaluations outside the line search, so
``cum_evals = sum(ls_evals * batch_size + base_evals)`` over records.  True
objective values written to the trace are never charged.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .problems import SumProblem
from .quasinewton import (LbfgsMemory, LineSearchError, SATISFIED, armijo_search,
                          wolfe_search)
from .sampling import (STREAM_SGD, UNIFORM, DETERMINISTIC_PREFIX, SampleSet, Schedule,
                       counter_rng, draw_sample)
from .theory import NoiseBoundSequence, inject_noise

__all__ = [
    "TRACE_COLUMNS",
    "TraceRecord",
    "Trace",
    "Budget",
    "StepPolicy",
    "RunConfig",
    "sampled_eval",
    "run_controlled_error_gd",
    "run_sampled_gd",
    "run_stochastic_gd",
    "run_hybrid_qn",
    "run_deterministic_qn",
    "solve_reference",
    "run",
]

TRACE_COLUMNS = ("k", "batch_size", "cum_evals", "eff_passes", "f_sampled", "f_true", "gap",
                 "grad_norm", "step", "ls_evals", "pair_accepted")

TRACE_POLICIES = ("every-iteration", "pass-boundary", "never")

NAN = math.nan


@dataclass
class TraceRecord:
    k: int
    batch_size: int
    cum_evals: int
    eff_passes: float
    f_sampled: float = NAN
    f_true: float = NAN
    gap: float = NAN
    grad_norm: float = NAN
    step: float = NAN
    ls_evals: int = 0
    pair_accepted: bool = False
    # not part of the CSV schema
    base_evals: int = 0
    err_sq: float = NAN
    avg_gap: float = NAN
    status: str = ""


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


class Trace:
    """Ordered per-iteration records of one run."""

    def __init__(self, M: int, method: str, meta: dict | None = None):
        self.M = M
        self.method = method
        self.meta = dict(meta or {})
        self.records: list[TraceRecord] = []
        self.status = "running"

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def last(self) -> TraceRecord:
        return self.records[-1]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path=None) -> str:
        """CSV text with the fixed column schema; written to ``path`` if given."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            w.writerow([_fmt(getattr(r, c)) for c in TRACE_COLUMNS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def at_passes(self, passes: float, field_name: str = "gap") -> float:
        """Value of ``field_name`` at the last record within ``passes`` effective passes."""
        best = NAN
        for r in self.records:
            if r.eff_passes > passes:
                break
            v = getattr(r, field_name)
            if not math.isnan(v):
                best = v
        return best

    def accounting_ok(self) -> bool:
        total = 0
        for r in self.records:
            total += r.ls_evals * r.batch_size + r.base_evals
            if total != r.cum_evals or r.eff_passes != r.cum_evals / self.M:
                return False
        return True


@dataclass(frozen=True)
class Budget:
    """Stop after ``max_iters`` iterations or once ``max_passes`` effective passes are used."""

    max_iters: int | None = None
    max_passes: float | None = None

    def __post_init__(self):
        if self.max_iters is None and self.max_passes is None:
            raise ValueError("budget needs max_iters or max_passes")
        if (self.max_iters is not None and self.max_iters <= 0) or \
                (self.max_passes is not None and self.max_passes <= 0):
            raise ValueError("budget must be positive")

    def exhausted(self, k: int, cum_evals: int, M: int) -> bool:
        if self.max_iters is not None and k >= self.max_iters:
            return True
        return self.max_passes is not None and cum_evals >= self.max_passes * M


@dataclass(frozen=True)
class StepPolicy:
    """``fixed`` (1/L), ``constant`` (alpha), ``decaying`` (alpha/t) or ``line-search``."""

    kind: str = "constant"
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ("fixed", "constant", "decaying", "line-search"):
            raise ValueError(f"unknown step policy {self.kind!r}")
        if self.alpha <= 0:
            raise ValueError("step size must be positive")


class _Observer:
    """Decides when to evaluate the true objective and fills f_true/gap."""

    def __init__(self, p: SumProblem, policy: str, f_star: float | None):
        if policy not in TRACE_POLICIES:
            raise ValueError(f"unknown trace policy {policy!r}")
        self.p = p
        self.policy = policy
        self.f_star = f_star
        self.closed_form = f_star is None and type(p).gap is not SumProblem.gap
        self.last_pass = -1

    def due(self, cum_evals: int, force: bool = False) -> bool:
        if self.policy == "never":
            return False
        if self.policy == "every-iteration" or force:
            return True
        return cum_evals // self.p.M > self.last_pass

    def fill(self, rec: TraceRecord, x, force: bool = False):
        if not self.due(rec.cum_evals, force):
            return
        self.last_pass = rec.cum_evals // self.p.M
        if not np.all(np.isfinite(x)):
            rec.f_true = math.inf
            rec.gap = math.inf
            return
        rec.f_true = self.p.full_value(x)
        if self.closed_form:
            rec.gap = self.p.gap(x)
        else:
            f_star = self.f_star if self.f_star is not None else self.p.constants.f_star
            if f_star is not None:
                rec.gap = rec.f_true - f_star


def _start(p, x0, method, policy, f_star, meta=None):
    x = np.array(p._check(x0), dtype=float)
    trace = Trace(p.M, method, meta)
    obs = _Observer(p, policy, f_star)
    rec = TraceRecord(0, 0, 0, 0.0)
    obs.fill(rec, x, force=True)
    trace.records.append(rec)
    return x, trace, obs


def _finish(trace: Trace, obs: _Observer, x, status: str):
    # make sure the final iterate carries a true value
    last = trace.last
    if math.isnan(last.f_true) and obs.policy != "never":
        obs.fill(last, x, force=True)
    trace.status = status
    trace.x = x
    return trace


def sampled_eval(s: SampleSet | None, p: SumProblem, x) -> tuple[float, np.ndarray]:
    """Sampled objective and gradient over ``s`` (full set if None), regularizer included."""
    return p.sampled(x, None if s is None else s.indices)


# ---------------------------------------------------------------------------
# controlled-error gradient descent
# ---------------------------------------------------------------------------

def _lipschitz(p: SumProblem, L: float | None) -> float | None:
    """Explicit L, else the problem's known constant, else its computable bound."""
    if L is not None:
        return L
    if p.constants.L is not None:
        return p.constants.L
    bound = getattr(p, "lipschitz_bound", None)
    return None if bound is None else bound()


def run_controlled_error_gd(p: SumProblem, x0, noise: NoiseBoundSequence, budget: Budget,
                            seed: int = 0, noise_mode: str = "exact-norm",
                            L: float | None = None, mu: float | None = None,
                            track_average: bool = False, policy: str = "every-iteration",
                            f_star: float | None = None) -> Trace:
    """x_{k+1} = x_k - (grad f(x_k) + e_k)/L with ||e_k||^2 (or its mean) equal to B_k.

    State-dependent bounds receive the true gap (oracle), ||grad f(x_k)|| and the
    previous step length.  With ``track_average`` each record also holds the gap
    of x_bar_k = (1/k) sum_{i=1..k} x_i in ``avg_gap``.
    """
    L = _lipschitz(p, L)
    mu = mu if mu is not None else p.constants.mu
    if L is None:
        raise ValueError("controlled-error descent needs the Lipschitz constant L")
    x, trace, obs = _start(p, x0, "controlled-error-gd", policy, f_star,
                           {"seed": seed, "noise": noise.kind, "mode": noise_mode})
    M, cum, k = p.M, 0, 0
    step_norm = 0.0
    xsum = np.zeros_like(x)
    gap_fn = (lambda z: p.gap(z, f_star))
    while not budget.exhausted(k, cum, M):
        grad = p.full_gradient(x)
        state = {}
        if noise.state_dependent:
            state = dict(gap=gap_fn(x), g_norm=float(np.linalg.norm(grad)),
                         step_norm=step_norm, mu=mu, L=L)
        B = noise(k, **state)
        e = inject_noise(B, p.n, seed, k, noise_mode)
        g = grad + e
        x_new = x - g / L
        step_norm = float(np.linalg.norm(x_new - x))
        x = x_new
        cum += M
        k += 1
        rec = TraceRecord(k, M, cum, cum / M, grad_norm=float(np.linalg.norm(g)),
                          step=1.0 / L, base_evals=M, err_sq=float(e @ e))
        obs.fill(rec, x)
        if track_average:
            xsum += x
            rec.avg_gap = gap_fn(xsum / k)
        trace.records.append(rec)
        if not np.all(np.isfinite(x)):
            return _finish(trace, obs, x, "diverged")
    return _finish(trace, obs, x, "budget")


def run_sampled_gd(p: SumProblem, x0, schedule: Schedule, budget: Budget,
                   L: float | None = None, sampling: str = DETERMINISTIC_PREFIX,
                   seed: int = 0, policy: str = "every-iteration",
                   f_star: float | None = None) -> Trace:
    """x_{k+1} = x_k - g_k(x_k)/L with g_k averaged over a sample of size ``schedule``."""
    L = _lipschitz(p, L)
    if L is None:
        raise ValueError("sampled gradient descent needs the Lipschitz constant L")
    x, trace, obs = _start(p, x0, "sampled-gd", policy, f_star,
                           {"seed": seed, "schedule": schedule.kind})
    M, cum, k, b = p.M, 0, 0, None
    while not budget.exhausted(k, cum, M):
        gap = trace.last.gap
        b = schedule.size(k, M, b, gap=None if math.isnan(gap) else gap)
        s = draw_sample(M, b, sampling, seed, k)
        f_s, g = sampled_eval(s, p, x)
        x = x - g / L
        cum += b
        k += 1
        rec = TraceRecord(k, b, cum, cum / M, f_sampled=f_s,
                          grad_norm=float(np.linalg.norm(g)), step=1.0 / L, base_evals=b)
        obs.fill(rec, x)
        trace.records.append(rec)
    return _finish(trace, obs, x, "budget")


# ---------------------------------------------------------------------------
# stochastic gradient baseline
# ---------------------------------------------------------------------------

def run_stochastic_gd(p: SumProblem, x0, step: StepPolicy, budget: Budget, seed: int = 0,
                      record_every: int | None = None, policy: str = "every-iteration",
                      f_star: float | None = None) -> Trace:
    """x <- x - a_t (grad f_i(x) + lam x) with i uniform on {0..M-1}, t = 1, 2, ...

    ``budget.max_iters`` counts single-term steps.  One record is written every
    ``record_every`` steps (default M, i.e. once per effective pass).
    """
    if step.kind not in ("constant", "decaying"):
        raise ValueError("stochastic steps must be constant or decaying")
    M = p.M
    chunk = record_every or M
    x, trace, obs = _start(p, x0, "stochastic-gd", policy, f_star,
                           {"seed": seed, "alpha": step.alpha, "step": step.kind})
    t, cum, j = 0, 0, 0
    while not budget.exhausted(t, cum, M):
        count = chunk
        if budget.max_iters is not None:
            count = min(count, budget.max_iters - t)
        if budget.max_passes is not None:
            count = min(count, max(1, math.ceil(budget.max_passes * M) - cum))
        order = counter_rng(seed, j, STREAM_SGD).integers(0, M, size=count)
        if step.kind == "constant":
            steps = np.full(count, step.alpha)
        else:
            steps = step.alpha / np.arange(t + 1, t + count + 1, dtype=float)
        x = p.sgd_steps(x, order, steps)
        t += count
        cum += count
        j += 1
        rec = TraceRecord(j, 1, cum, cum / M, step=float(steps[-1]), base_evals=count)
        obs.fill(rec, x)
        trace.records.append(rec)
        if not np.all(np.isfinite(x)):
            return _finish(trace, obs, x, "diverged")
    return _finish(trace, obs, x, "budget")


# ---------------------------------------------------------------------------
# quasi-Newton drivers
# ---------------------------------------------------------------------------

_GUARD_NORM = 1e4


def _first_step(g_norm: float) -> float:
    return 1.0 / g_norm if g_norm > _GUARD_NORM else 1.0


def _regularized(p, x, fsum, gsum, count):
    return fsum / count + 0.5 * p.lam * float(x @ x), gsum / count + p.lam * x


def run_hybrid_qn(p: SumProblem, x0, schedule: Schedule, budget: Budget, seed: int = 0,
                  eta: float = 1e-4, memory: int = 10, sampling: str = UNIFORM,
                  policy: str = "pass-boundary", f_star: float | None = None,
                  gtol: float = 0.0, nested: bool = False) -> Trace:
    """Growing-sample L-BFGS with an Armijo search on the sampled objective.

    Each iteration draws B_k, evaluates f_k and g_k at x_k, takes the
    L-BFGS direction, and searches from a = |B_{k-1}|/|B_k| (1 at k = 0).
    The pair (s_k, y_k) uses g_k at both endpoints, on the same sample.  If the
    search fails the iterate is kept, the step recorded as 0, and the batch
    keeps growing; on the full batch a failure ends the run.

    Cost per iteration is (trials + 1) * |B_k|: the evaluation at x_k plus one
    per trial.  Trials compute value and gradient, so y_k comes from the
    accepted trial.  When samples grow by inclusion (prefix mode, or
    ``nested``) the sums at x_k over B_{k-1} are already known, so only the
    new terms are evaluated and charged; the first full sample is evaluated
    afresh so that it matches the true objective exactly.
    """
    M = p.M
    x, trace, obs = _start(p, x0, "hybrid-qn", policy, f_star,
                           {"seed": seed, "schedule": schedule.kind, "sampling": sampling,
                            "nested": nested, "eta": eta, "memory": memory})
    reuse = nested or sampling == DETERMINISTIC_PREFIX
    mem = LbfgsMemory(memory)
    cum, k, b_prev = 0, 0, None
    carried = None  # (sample, fsum, gsum) at the current x
    status = "budget"
    while not budget.exhausted(k, cum, M):
        gap = trace.last.gap
        b = schedule.size(k, M, b_prev, gap=None if math.isnan(gap) else gap)
        s = draw_sample(M, b, sampling, seed, k, nested=nested)
        idx = None if s.is_full else s.indices
        fresh = b
        if reuse and carried is not None and (carried[0].is_full or not s.is_full):
            prev, fsum, gsum = carried
            extra = np.setdiff1d(s.indices, prev.indices, assume_unique=True)
            if extra.size:
                fs_x, gs_x = p.batch_sums(x, extra)
                fsum, gsum = fsum + fs_x, gsum + gs_x
            fresh = int(extra.size)
        else:
            fsum, gsum = p.batch_sums(x, idx)
        f_k, g = _regularized(p, x, fsum, gsum, b)
        g_norm = float(np.linalg.norm(g))
        d = mem.direction(g)
        slope = float(g @ d)
        if slope >= 0 and g_norm > 0:
            mem.clear()
            d = -g
            slope = -g_norm * g_norm
        alpha0 = _first_step(g_norm) if k == 0 else b_prev / b
        trials: dict[float, tuple[float, np.ndarray, np.ndarray]] = {}

        def phi(a):
            xt = x + a * d
            fs_t, gs_t = p.batch_sums(xt, idx)
            trials[a] = (fs_t, gs_t, xt)
            return _regularized(p, xt, fs_t, gs_t, b)[0]

        accepted = False
        if g_norm <= gtol or slope == 0.0:
            res = None
        else:
            try:
                res = armijo_search(phi, f_k, slope, alpha0, eta)
            except LineSearchError:
                res = None
        ls_evals = 0 if res is None else res.evaluations
        cum += ls_evals * b + fresh
        k += 1
        rec = TraceRecord(k, b, cum, cum / M, f_sampled=f_k, grad_norm=g_norm,
                          step=0.0, ls_evals=ls_evals, base_evals=fresh)
        if res is not None and res.status == SATISFIED:
            fs_t, gs_t, x_new = trials[res.step]
            _, g_new = _regularized(p, x_new, fs_t, gs_t, b)
            accepted = mem.push_pair(x_new - x, g_new - g)
            x = x_new
            carried = (s, fs_t, gs_t)
            rec.f_sampled = res.value
            rec.step = res.step
        else:
            carried = (s, fsum, gsum)
            rec.status = "no-step" if res is None else res.status
        rec.pair_accepted = accepted
        obs.fill(rec, x)
        trace.records.append(rec)
        b_prev = b
        if s.is_full and rec.step == 0.0:
            status = "converged" if g_norm <= gtol or res is None else "line-search-failed"
            break
    return _finish(trace, obs, x, status)


def run_deterministic_qn(p: SumProblem, x0, budget: Budget, memory: int = 10,
                         line_search: str = "wolfe", c1: float = 1e-4, c2: float = 0.9,
                         eta: float = 1e-4, policy: str = "every-iteration",
                         f_star: float | None = None, gtol: float = 0.0) -> Trace:
    """Full-batch L-BFGS; each trial point costs one pass (value and gradient)."""
    if line_search not in ("wolfe", "armijo"):
        raise ValueError(f"unknown line search {line_search!r}")
    M = p.M
    x, trace, obs = _start(p, x0, "deterministic-qn", policy, f_star,
                           {"line_search": line_search, "memory": memory})
    mem = LbfgsMemory(memory)
    f, g = p.full_value_and_gradient(x)
    pending_base = M
    cum, k = 0, 0
    status = "budget"
    while not budget.exhausted(k, cum, M):
        g_norm = float(np.linalg.norm(g))
        if g_norm <= gtol:
            status = "converged"
            break
        d = mem.direction(g)
        slope = float(g @ d)
        if slope >= 0:
            mem.clear()
            d = -g
            slope = -g_norm * g_norm
        if slope == 0.0:
            status = "converged"
            break
        alpha0 = _first_step(g_norm) if k == 0 else 1.0
        trials: dict[float, tuple[float, np.ndarray, np.ndarray]] = {}

        def evaluate(a):
            if a not in trials:
                xt = x + a * d
                ft, gt = p.full_value_and_gradient(xt)
                trials[a] = (ft, gt, xt)
            return trials[a]

        if line_search == "wolfe":
            def phi(a):
                ft, gt, _ = evaluate(a)
                return ft, float(gt @ d)
            res = wolfe_search(phi, f, slope, alpha0, c1, c2)
        else:
            res = armijo_search(lambda a: evaluate(a)[0], f, slope, alpha0, eta)
        cum += res.evaluations * M + pending_base
        k += 1
        rec = TraceRecord(k, M, cum, cum / M, f_sampled=f, grad_norm=g_norm, step=0.0,
                          ls_evals=res.evaluations, base_evals=pending_base)
        pending_base = 0
        moved = res.step in trials and trials[res.step][0] < f
        if res.status == SATISFIED or moved:
            f_new, g_new, x_new = trials[res.step]
            rec.pair_accepted = mem.push_pair(x_new - x, g_new - g)
            x, f, g = x_new, f_new, g_new
            rec.f_sampled = f
            rec.step = res.step
            if res.status != SATISFIED:
                rec.status = res.status
        else:
            rec.status = res.status
        obs.fill(rec, x)
        trace.records.append(rec)
        if rec.step == 0.0:
            status = "line-search-failed"
            break
    return _finish(trace, obs, x, status)


def solve_reference(p: SumProblem, x0=None, max_iters: int = 2000, gtol: float = 1e-13):
    """High-accuracy minimizer by full-batch L-BFGS; returns (x, f)."""
    x0 = np.zeros(p.n) if x0 is None else x0
    tr = run_deterministic_qn(p, x0, Budget(max_iters=max_iters), memory=20,
                              policy="never", gtol=gtol)
    x = tr.x
    return x, p.full_value(x)


# ---------------------------------------------------------------------------
# config-driven dispatch
# ---------------------------------------------------------------------------

METHODS = ("controlled-error-gd", "sampled-gd", "stochastic-gd", "hybrid-qn", "deterministic-qn")


@dataclass
class RunConfig:
    """Everything needed to reproduce one run of one method."""

    method: str
    budget: Budget
    seed: int = 0
    step: StepPolicy = field(default_factory=lambda: StepPolicy("line-search"))
    schedule: Schedule | None = None
    noise: NoiseBoundSequence | None = None
    noise_mode: str = "exact-norm"
    sampling: str = UNIFORM
    nested: bool = False
    eta: float = 1e-4
    memory: int = 10
    line_search: str = "wolfe"
    trace_policy: str = "pass-boundary"
    L: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.method == "controlled-error-gd" and self.noise is None:
            raise ValueError("controlled-error-gd needs a noise sequence")
        if self.method in ("hybrid-qn", "sampled-gd") and self.schedule is None:
            raise ValueError(f"{self.method} needs a schedule")
        if self.method == "stochastic-gd" and self.step.kind not in ("constant", "decaying"):
            raise ValueError("stochastic-gd needs a constant or decaying step")


def run(p: SumProblem, x0, cfg: RunConfig, f_star: float | None = None) -> Trace:
    if cfg.method == "controlled-error-gd":
        return run_controlled_error_gd(p, x0, cfg.noise, cfg.budget, cfg.seed, cfg.noise_mode,
                                       L=cfg.L, policy=cfg.trace_policy, f_star=f_star)
    if cfg.method == "sampled-gd":
        return run_sampled_gd(p, x0, cfg.schedule, cfg.budget, L=cfg.L, sampling=cfg.sampling,
                              seed=cfg.seed, policy=cfg.trace_policy, f_star=f_star)
    if cfg.method == "stochastic-gd":
        return run_stochastic_gd(p, x0, cfg.step, cfg.budget, cfg.seed,
                                 policy=cfg.trace_policy, f_star=f_star)
    if cfg.method == "hybrid-qn":
        return run_hybrid_qn(p, x0, cfg.schedule, cfg.budget, cfg.seed, cfg.eta, cfg.memory,
                             cfg.sampling, cfg.trace_policy, f_star, nested=cfg.nested)
    return run_deterministic_qn(p, x0, cfg.budget, cfg.memory, cfg.line_search,
                                eta=cfg.eta, policy=cfg.trace_policy, f_star=f_star)

