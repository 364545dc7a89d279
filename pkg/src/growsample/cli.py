"""Command-line experiment runner.

Subcommands::

    growsample run --config exp.ini --out results/
    growsample sweep --config exp.ini --out results/
    growsample verify-rates strong
    growsample stats --data train.svm

Exit status: 0 success, 1 a verification check failed, 2 bad config or data.
"""

from __future__ import annotations

import argparse
import configparser
import inspect
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_io import (dataset_stats, generate_synthetic_logistic,
                      generate_synthetic_multinomial, load_libsvm, make_problem)
from .optimizers import METHODS, Budget, RunConfig, StepPolicy, run, solve_reference
from .problems import SyntheticQuadratic
from .sampling import DETERMINISTIC_PREFIX, UNIFORM, Schedule
from .theory import NOISE_MODES, NoiseBoundSequence
from .verification import EXTRA_SUITES, SUITES, run_suite

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG = 0, 1, 2

STEP_GRID = tuple(10.0 ** -e for e in range(7))

SOURCES = ("synthetic-logistic", "synthetic-multinomial", "file", "quadratic")
MODELS = ("binary-logistic", "multinomial", "least-squares", "quadratic")
X0_CHOICES = ("zero", "ones", "random")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending [section] key."""


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

class _Section:
    """Typed, key-path-reporting access to one config section."""

    def __init__(self, cp: configparser.ConfigParser, name: str):
        self.name = name
        self.data = cp[name] if cp.has_section(name) else {}

    def _where(self, key):
        return f"[{self.name}] {key}"

    def has(self, key):
        return key in self.data and self.data[key].strip() != ""

    def str(self, key, default=None, choices=None):
        if not self.has(key):
            if default is None:
                raise ConfigError(f"{self._where(key)}: required key is missing")
            return default
        v = self.data[key].strip()
        if choices is not None and v not in choices:
            raise ConfigError(f"{self._where(key)}: {v!r} is not one of {', '.join(choices)}")
        return v

    def float(self, key, default=None, positive=False):
        if not self.has(key):
            if default is None:
                raise ConfigError(f"{self._where(key)}: required key is missing")
            return default
        try:
            v = float(self.data[key])
        except ValueError:
            raise ConfigError(f"{self._where(key)}: {self.data[key]!r} is not a number") from None
        if not math.isfinite(v) and not (key == "separation" and v == math.inf):
            raise ConfigError(f"{self._where(key)}: value must be finite")
        if positive and not v > 0:
            raise ConfigError(f"{self._where(key)}: must be positive")
        return v

    def int(self, key, default=None, minimum=None):
        if not self.has(key):
            if default is None:
                raise ConfigError(f"{self._where(key)}: required key is missing")
            return default
        try:
            v = int(self.data[key])
        except ValueError:
            raise ConfigError(f"{self._where(key)}: {self.data[key]!r} is not an integer") from None
        if minimum is not None and v < minimum:
            raise ConfigError(f"{self._where(key)}: must be >= {minimum}")
        return v

    def bool(self, key, default=False):
        if not self.has(key):
            return default
        v = self.data[key].strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{self._where(key)}: {self.data[key]!r} is not a boolean")

    def floats(self, key, default=None):
        if not self.has(key):
            if default is None:
                raise ConfigError(f"{self._where(key)}: required key is missing")
            return tuple(default)
        try:
            return tuple(float(t) for t in self.data[key].replace(",", " ").split())
        except ValueError:
            raise ConfigError(f"{self._where(key)}: expected a list of numbers") from None

    def ints(self, key, default=None):
        vals = self.floats(key, default)
        if any(v != int(v) for v in vals):
            raise ConfigError(f"{self._where(key)}: expected a list of integers")
        return tuple(int(v) for v in vals)


@dataclass
class ProblemSpec:
    source: str
    model: str
    lam: float
    params: dict = field(default_factory=dict)


@dataclass
class MethodSpec:
    method: str
    options: dict
    steps: tuple = ()


@dataclass
class ExperimentConfig:
    problem: ProblemSpec
    methods: list
    seeds: tuple
    passes: float | None
    max_iters: int | None
    f_star: str
    trace_policy: str
    base_dir: Path
    x0: str = "zero"


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} not found")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(cp, path.parent)


def parse_config(cp: configparser.ConfigParser, base_dir=Path(".")) -> ExperimentConfig:
    pr = _Section(cp, "problem")
    if not cp.has_section("problem"):
        raise ConfigError("[problem]: section is missing")
    source = pr.str("source", choices=SOURCES)
    model = pr.str("model", "quadratic" if source == "quadratic" else
                   "multinomial" if source == "synthetic-multinomial" else "binary-logistic",
                   choices=MODELS)
    if (source == "quadratic") != (model == "quadratic"):
        raise ConfigError("[problem] model: the quadratic model goes with source = quadratic only")
    lam = pr.float("lam", 0.0)
    if lam < 0:
        raise ConfigError("[problem] lam: must be nonnegative")
    params: dict = {}
    if source == "file":
        p = Path(pr.str("path"))
        p = p if p.is_absolute() else Path(base_dir) / p
        if not p.is_file():
            raise ConfigError(f"[problem] path: dataset file {str(p)!r} not found")
        params["path"] = str(p)
        params["n"] = pr.int("n", 0, minimum=0) or None
    elif source == "quadratic":
        params.update(n=pr.int("n", 10, minimum=1), mu=pr.float("mu", 0.5, positive=True),
                      L=pr.float("L", 2.0, positive=True), M=pr.int("M", 1, minimum=1),
                      spread=pr.float("spread", 0.0), data_seed=pr.int("data_seed", 0))
        if params["mu"] > params["L"]:
            raise ConfigError("[problem] mu: must not exceed L")
    else:
        params.update(M=pr.int("M", minimum=1), n=pr.int("n", minimum=1),
                      sparsity=pr.float("sparsity", 1.0), separation=pr.float("separation", 1.0),
                      data_seed=pr.int("data_seed", 0))
        if not 0 < params["sparsity"] <= 1:
            raise ConfigError("[problem] sparsity: must lie in (0, 1]")
        if source == "synthetic-logistic":
            params["scale_range"] = pr.float("scale_range", 1.0, positive=True)
        else:
            params["classes"] = pr.int("classes", 3, minimum=2)
    if model == "multinomial":
        params.setdefault("classes", pr.int("classes", 0, minimum=0) or None)
    problem = ProblemSpec(source, model, lam, params)

    rn = _Section(cp, "run")
    passes = rn.float("passes", 0.0) or None
    max_iters = rn.int("max_iters", 0, minimum=0) or None
    if passes is None and max_iters is None:
        raise ConfigError("[run] passes: give passes or max_iters (budget must be positive)")
    if passes is not None and passes < 0:
        raise ConfigError("[run] passes: must be positive")
    seeds = rn.ints("seeds", (0,))
    f_star = rn.str("f_star", "auto")
    if f_star not in ("auto", "none"):
        try:
            float(f_star)
        except ValueError:
            raise ConfigError("[run] f_star: expected auto, none or a number") from None
    policy = rn.str("trace_policy", "pass-boundary",
                    choices=("every-iteration", "pass-boundary", "never"))

    x0 = rn.str("x0", "zero", choices=X0_CHOICES)

    methods = []
    for name in cp.sections():
        if not name.startswith("method:"):
            continue
        methods.append(_parse_method(_Section(cp, name), name.split(":", 1)[1].strip()))
    if not methods:
        raise ConfigError("[method:...]: at least one method section is required")
    return ExperimentConfig(problem, methods, seeds, passes, max_iters, f_star, policy,
                            Path(base_dir), x0)


def _schedule(sec: _Section) -> Schedule:
    kind = sec.str("schedule", "paper-linear", choices=Schedule.KINDS)
    params = {}
    if kind == "strong-rate":
        params = {k: sec.float(k) for k in ("L", "mu", "rho")}
        params.update(beta1=sec.float("beta1", 0.0), beta2=sec.float("beta2", 1.0))
    gamma = sec.float("gamma", 0.9)
    if kind.startswith("geometric") and not 0 < gamma < 1:
        raise ConfigError(f"[{sec.name}] gamma: must lie in (0, 1)")
    return Schedule(kind, initial=sec.int("initial", 1, minimum=1), gamma=gamma, params=params)


def _parse_method(sec: _Section, method: str) -> MethodSpec:
    if method not in METHODS:
        raise ConfigError(f"[{sec.name}]: unknown method {method!r}; choose from {', '.join(METHODS)}")
    opts: dict = {}
    steps: tuple = ()
    if method == "hybrid-qn":
        opts.update(schedule=_schedule(sec), eta=sec.float("eta", 1e-4),
                    memory=sec.int("memory", 10, minimum=1),
                    sampling=sec.str("sampling", UNIFORM, choices=(UNIFORM, DETERMINISTIC_PREFIX)),
                    nested=sec.bool("nested", False))
        if not 0 < opts["eta"] < 1:
            raise ConfigError(f"[{sec.name}] eta: must lie in (0, 1)")
    elif method == "deterministic-qn":
        opts.update(memory=sec.int("memory", 10, minimum=1),
                    line_search=sec.str("line_search", "wolfe", choices=("wolfe", "armijo")))
    elif method == "stochastic-gd":
        kind = sec.str("step_kind", "constant", choices=("constant", "decaying"))
        steps = sec.floats("steps", STEP_GRID)
        if not steps or any(not a > 0 for a in steps):
            raise ConfigError(f"[{sec.name}] steps: step sizes must be positive")
        opts["step_kind"] = kind
    elif method == "sampled-gd":
        opts.update(schedule=_schedule(sec),
                    sampling=sec.str("sampling", DETERMINISTIC_PREFIX,
                                     choices=(UNIFORM, DETERMINISTIC_PREFIX)),
                    L=sec.float("L", 0.0) or None)
    else:
        kind = sec.str("noise", choices=NoiseBoundSequence.KINDS)
        try:
            noise = NoiseBoundSequence(kind, B0=sec.float("B0", 0.0), gamma=sec.float("gamma", 1.0),
                                       power=sec.float("power", 2.0), rho=sec.float("rho", 0.0),
                                       pi_source=sec.str("pi_source", "oracle"))
        except ValueError as exc:
            raise ConfigError(f"[{sec.name}] noise: {exc}") from None
        opts.update(noise=noise, noise_mode=sec.str("noise_mode", "exact-norm", choices=NOISE_MODES),
                    L=sec.float("L", 0.0) or None)
    return MethodSpec(method, opts, steps)


# ---------------------------------------------------------------------------
# problem construction and single runs (module level so workers can pickle them)
# ---------------------------------------------------------------------------

def build_dataset(spec: ProblemSpec):
    pm = spec.params
    if spec.source == "file":
        task = {"binary-logistic": "binary", "multinomial": "multiclass"}.get(spec.model,
                                                                              "regression")
        return load_libsvm(pm["path"], n=pm["n"], task=task)
    if spec.source == "synthetic-logistic":
        return generate_synthetic_logistic(pm["M"], pm["n"], pm["sparsity"], seed=pm["data_seed"],
                                           separation=pm["separation"],
                                           scale_range=pm["scale_range"])
    if spec.source == "synthetic-multinomial":
        return generate_synthetic_multinomial(pm["M"], pm["n"], pm["classes"], pm["sparsity"],
                                              seed=pm["data_seed"], separation=pm["separation"])
    raise ConfigError("[problem] source: a quadratic has no dataset")


def build_problem(spec: ProblemSpec):
    pm = spec.params
    if spec.source == "quadratic":
        return SyntheticQuadratic.make(pm["n"], pm["mu"], pm["L"], M=pm["M"], spread=pm["spread"],
                                       seed=pm["data_seed"], lam=spec.lam)
    d = build_dataset(spec)
    classes = pm.get("classes")
    if spec.model == "multinomial" and classes is None:
        classes = int(d.labels.max()) + 1 if d.M else 2
    return make_problem(d, spec.model, spec.lam, classes)


def start_point(n: int, how: str) -> np.ndarray:
    if how == "ones":
        return np.ones(n)
    if how == "random":
        return np.random.default_rng(0).standard_normal(n)
    return np.zeros(n)


def _resolve_f_star(p, how: str):
    if how == "none":
        return None
    if how != "auto":
        return float(how)
    if isinstance(p, SyntheticQuadratic):
        return None  # the closed-form gap is used
    return solve_reference(p)[1]


@dataclass(frozen=True)
class Job:
    method: str
    seed: int
    step: float | None
    filename: str


def _jobs(cfg: ExperimentConfig, seeds) -> list[tuple[Job, MethodSpec]]:
    out = []
    for spec in cfg.methods:
        for seed in seeds:
            for step in (spec.steps or (None,)):
                tag = f"{spec.method}_seed{seed}" + ("" if step is None else f"_step{step:g}")
                out.append((Job(spec.method, seed, step, tag + ".csv"), spec))
    return out


def _run_config(cfg: ExperimentConfig, spec: MethodSpec, job: Job) -> RunConfig:
    o = spec.options
    kw = dict(method=spec.method, budget=Budget(cfg.max_iters, cfg.passes), seed=job.seed,
              trace_policy=cfg.trace_policy)
    if spec.method == "stochastic-gd":
        kw["step"] = StepPolicy(o["step_kind"], job.step)
    elif spec.method == "controlled-error-gd":
        kw.update(noise=o["noise"], noise_mode=o["noise_mode"], L=o["L"],
                  step=StepPolicy("fixed"))
        if cfg.trace_policy == "pass-boundary":
            kw["trace_policy"] = "every-iteration"
    elif spec.method == "sampled-gd":
        kw.update(schedule=o["schedule"], sampling=o["sampling"], L=o["L"],
                  step=StepPolicy("fixed"))
    elif spec.method == "hybrid-qn":
        kw.update(schedule=o["schedule"], eta=o["eta"], memory=o["memory"],
                  sampling=o["sampling"], nested=o["nested"])
    else:
        kw.update(memory=o["memory"], line_search=o["line_search"])
    return RunConfig(**kw)


def _execute(args):
    """Run one job and write its CSV; returns the summary row."""
    problem_spec, x0, f_star, run_cfg, job, out_dir = args
    p = build_problem(problem_spec)
    trace = run(p, start_point(p.n, x0), run_cfg, f_star)
    trace.to_csv(Path(out_dir) / job.filename)
    last = trace.last
    finite_gaps = [r.gap for r in trace.records if not math.isnan(r.gap)]
    return {
        "method": job.method,
        "seed": job.seed,
        "step": job.step,
        "file": job.filename,
        "status": trace.status,
        "iterations": last.k,
        "eff_passes": last.eff_passes,
        "cum_evals": last.cum_evals,
        "final_f": last.f_true,
        "final_gap": finite_gaps[-1] if finite_gaps else None,
    }


def _map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(a) for a in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _write_json(path: Path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def execute_experiment(cfg: ExperimentConfig, out_dir, seeds=None, threads: int = 1,
                       only: str | None = None) -> list[dict]:
    """Run every (method, seed, step) job, write one CSV each plus summary.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = cfg.seeds if seeds is None else seeds
    p = build_problem(cfg.problem)
    f_star = _resolve_f_star(p, cfg.f_star)
    jobs = [(j, s) for j, s in _jobs(cfg, seeds) if only is None or j.method == only]
    rows = _map(_execute, [(cfg.problem, cfg.x0, f_star, _run_config(cfg, s, j), j, str(out_dir))
                           for j, s in jobs], threads)
    _write_json(out_dir / "summary.json", {"f_star": f_star, "M": p.M, "n": p.n, "runs": rows})
    return rows


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = load_config(args.config)
    seeds = None if args.seed is None else (args.seed,)
    rows = execute_experiment(cfg, args.out, seeds, args.threads)
    for r in rows:
        gap = "n/a" if r["final_gap"] is None else f"{r['final_gap']:.6e}"
        step = "" if r["step"] is None else f" step={r['step']:g}"
        print(f"{r['method']} seed={r['seed']}{step}: {r['iterations']} iterations, "
              f"{r['eff_passes']:.3f} passes, gap {gap} [{r['status']}] -> {r['file']}")
    return EXIT_OK


def rank_steps(rows, top: int = 3) -> list[dict]:
    """Best ``top`` step sizes by final gap (diverged or missing gaps rank last)."""
    def key(r):
        g = r["final_gap"]
        return (math.inf if g is None or not math.isfinite(g) else g, r["step"])
    return sorted(rows, key=key)[:top]


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    sgd = [m for m in cfg.methods if m.method == "stochastic-gd"]
    if not sgd:
        raise ConfigError("[method:stochastic-gd]: sweep needs a stochastic-gd section")
    seeds = None if args.seed is None else (args.seed,)
    rows = execute_experiment(cfg, args.out, seeds, args.threads, only="stochastic-gd")
    best = rank_steps(rows)
    _write_json(Path(args.out) / "ranking.json",
                {"criterion": "final gap", "best": [{"step": r["step"], "seed": r["seed"],
                                                     "final_gap": r["final_gap"],
                                                     "file": r["file"]} for r in best]})
    for i, r in enumerate(best, 1):
        print(f"{i}. step={r['step']:g} seed={r['seed']} final gap {r['final_gap']}")
    return EXIT_OK


def cmd_verify_rates(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    reports = []
    for name in names:
        fn = {**SUITES, **EXTRA_SUITES}[name]
        kwargs = {}
        if args.seed is not None and "seed" in inspect.signature(fn).parameters:
            kwargs["seed"] = args.seed
        rep = run_suite(name, **kwargs)
        reports.append(rep)
        for line in rep.lines():
            print(line)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "verification.json", [r.to_dict() for r in reports])
    ok = all(r.passed for r in reports)
    print("all checks passed" if ok else "verification FAILED")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_stats(args) -> int:
    if args.data:
        if not os.path.isfile(args.data):
            raise ConfigError(f"--data: file {args.data!r} not found")
        d = load_libsvm(args.data, n=args.n, task=args.task)
    elif args.config:
        d = build_dataset(load_config(args.config).problem)
    else:
        raise ConfigError("stats needs --data or --config")
    print(json.dumps(dataset_stats(d), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="growsample",
                                 description="Growing-sample optimization experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, config_required):
        sp.add_argument("--config", required=config_required, help="experiment config (.ini)")
        sp.add_argument("--seed", type=int, default=None, help="override the configured seeds")
        sp.add_argument("--threads", type=int, default=1, help="parallel worker processes")

    sp = sub.add_parser("run", help="run every configured method")
    common(sp, True)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="stochastic step-size sweep with a best-three ranking")
    common(sp, True)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("verify-rates", help="run a convergence verification suite")
    sp.add_argument("suite", choices=[*SUITES, *EXTRA_SUITES, "all"])
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", default=None, help="directory for verification.json")
    sp.add_argument("--threads", type=int, default=1, help="accepted for uniformity; unused")
    sp.set_defaults(func=cmd_verify_rates)

    sp = sub.add_parser("stats", help="dataset statistics")
    sp.add_argument("--data", help="LIBSVM file")
    sp.add_argument("--n", type=int, default=None, help="declared feature count")
    sp.add_argument("--task", default="binary", choices=("binary", "multiclass", "regression"))
    sp.add_argument("--config", default=None, help="use the [problem] section of a config")
    sp.set_defaults(func=cmd_stats)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:  # ConfigError and LibsvmParseError included
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
