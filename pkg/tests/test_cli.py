import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from growsample.cli import main
from growsample.optimizers import TRACE_COLUMNS

QUADRATIC = """
[problem]
source = quadratic
n = 10
mu = 0.5
L = 2.0
M = 20
spread = 1.0

[run]
max_iters = 60
x0 = ones
trace_policy = every-iteration

[method:deterministic-qn]
"""

LOGISTIC = """
[problem]
source = synthetic-logistic
M = 400
n = 10
lam = 0.01
separation = 2.0
sparsity = 0.5

[run]
passes = 5
seeds = 0

[method:hybrid-qn]
schedule = paper-linear

[method:deterministic-qn]

[method:stochastic-gd]
"""


def _write(tmp_path, text, name="cfg.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_run_quadratic_reaches_tiny_gap(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", _write(tmp_path, QUADRATIC), "--out", str(out)]) == 0
    rows = _read_csv(out / "deterministic-qn_seed0.csv")
    assert float(rows[-1]["gap"]) < 1e-8
    summary = json.loads((out / "summary.json").read_text())
    assert summary["runs"][0]["final_gap"] < 1e-8
    assert "deterministic-qn seed=0" in capsys.readouterr().out


def test_run_is_byte_identical_and_thread_independent(tmp_path):
    cfg = _write(tmp_path, LOGISTIC.replace("[method:stochastic-gd]", "[method:stochastic-gd]\nsteps = 0.1, 0.01"))
    dirs = []
    for name, threads in (("a", 1), ("b", 1), ("c", 2)):
        assert main(["run", "--config", cfg, "--out", str(tmp_path / name), "--threads", str(threads)]) == 0
        dirs.append(tmp_path / name)
    files = sorted(p.name for p in dirs[0].iterdir())
    assert len(files) == 5
    for other in dirs[1:]:
        assert sorted(p.name for p in other.iterdir()) == files
        for f in files:
            assert (dirs[0] / f).read_bytes() == (other / f).read_bytes()


def test_csv_schema_and_passes_column(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", _write(tmp_path, LOGISTIC), "--out", str(out)]) == 0
    for path in out.glob("*.csv"):
        with open(path) as fh:
            header = next(csv.reader(fh))
        assert tuple(header) == TRACE_COLUMNS
        for row in _read_csv(path):
            assert float(row["eff_passes"]) == int(row["cum_evals"]) / 400


def test_seed_flag_overrides_config(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", _write(tmp_path, QUADRATIC), "--out", str(out), "--seed", "7"]) == 0
    assert (out / "deterministic-qn_seed7.csv").exists()


def test_missing_dataset_names_the_key(tmp_path, capsys):
    cfg = _write(tmp_path, """
[problem]
source = file
path = nowhere.svm
[run]
passes = 1
[method:deterministic-qn]
""")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "[problem] path" in capsys.readouterr().err


@pytest.mark.parametrize("patch,key", [
    (("lam = 0.01", "lam = -1"), "[problem] lam"),
    (("passes = 5", "passes = many"), "[run] passes"),
    (("schedule = paper-linear", "schedule = cubic"), "[method:hybrid-qn] schedule"),
    (("[method:stochastic-gd]", "[method:stochastic-gd]\nsteps = 0.1, -1"), "[method:stochastic-gd] steps"),
    (("[method:deterministic-qn]", "[method:newton]"), "[method:newton]"),
    (("sparsity = 0.5", "sparsity = 2"), "[problem] sparsity"),
])
def test_config_errors_exit_2_with_key_path(tmp_path, capsys, patch, key):
    cfg = _write(tmp_path, LOGISTIC.replace(*patch))
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert key in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["run", "--config", str(tmp_path / "none.ini"), "--out", str(tmp_path)]) == 2


def test_malformed_data_reports_line(tmp_path, capsys):
    data = tmp_path / "bad.svm"
    data.write_text("+1 1:0.5\n-1 2:a\n")
    cfg = _write(tmp_path, f"""
[problem]
source = file
path = {data}
[run]
passes = 1
[method:deterministic-qn]
""")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "line 2" in err and "2:a" in err


def test_file_source_runs(tmp_path):
    from growsample.data_io import generate_synthetic_logistic, write_libsvm
    data = tmp_path / "d.svm"
    data.write_text(write_libsvm(generate_synthetic_logistic(100, 5, seed=1)))
    cfg = _write(tmp_path, f"""
[problem]
source = file
path = d.svm
lam = 0.1
[run]
passes = 3
[method:hybrid-qn]
nested = true
""")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "hybrid-qn_seed0.csv").exists()


def test_multinomial_and_controlled_error_configs(tmp_path):
    cfg = _write(tmp_path, """
[problem]
source = synthetic-multinomial
M = 120
n = 6
classes = 4
lam = 0.05
[run]
passes = 4
[method:hybrid-qn]
[method:sampled-gd]
schedule = geometric-deterministic
L = 5
""")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "m")]) == 0
    cfg = _write(tmp_path, """
[problem]
source = quadratic
[run]
max_iters = 50
x0 = random
[method:controlled-error-gd]
noise = geometric
B0 = 0.25
gamma = 0.8
""", "ce.ini")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "c")]) == 0
    rows = _read_csv(tmp_path / "c" / "controlled-error-gd_seed0.csv")
    assert len(rows) == 51 and float(rows[-1]["gap"]) < float(rows[0]["gap"])


def test_sweep_writes_seven_traces_and_stable_ranking(tmp_path):
    cfg = _write(tmp_path, LOGISTIC)
    for name in ("s1", "s2"):
        assert main(["sweep", "--config", cfg, "--out", str(tmp_path / name), "--threads", "2"]) == 0
    csvs = sorted((tmp_path / "s1").glob("*.csv"))
    assert len(csvs) == 7
    r1 = json.loads((tmp_path / "s1" / "ranking.json").read_text())
    r2 = json.loads((tmp_path / "s2" / "ranking.json").read_text())
    assert r1 == r2 and len(r1["best"]) == 3
    runs = json.loads((tmp_path / "s1" / "summary.json").read_text())["runs"]
    gaps = {r["step"]: r["final_gap"] for r in runs}
    assert any(g < gaps[1.0] for a, g in gaps.items() if a != 1.0)


def test_sweep_needs_stochastic_section(tmp_path):
    assert main(["sweep", "--config", _write(tmp_path, QUADRATIC), "--out", str(tmp_path / "o")]) == 2


def test_verify_rates_suites(tmp_path, capsys):
    assert main(["verify-rates", "strong", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "all checks passed" in out
    report = json.loads((tmp_path / "verification.json").read_text())
    assert report[0]["suite"] == "strong" and report[0]["passed"]
    assert main(["verify-rates", "sampling"]) == 0


def test_verify_rates_unknown_suite_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["verify-rates", "bogus"])
    assert info.value.code == 2


def test_verify_rates_failure_exits_1(monkeypatch):
    import growsample.cli as cli
    from growsample.verification import Check, SuiteReport

    monkeypatch.setitem(cli.SUITES, "lemma",
                        lambda: SuiteReport("lemma", [Check("x", False, -1.0, 3, "forced")]))
    assert main(["verify-rates", "lemma"]) == 1


def test_stats_command(tmp_path, capsys):
    data = tmp_path / "d.svm"
    data.write_text("+1 3:1.5 7:2\n-1\n")
    assert main(["stats", "--data", str(data)]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert (stats["M"], stats["n"], stats["nnz"]) == (2, 7, 2)
    assert main(["stats", "--config", _write(tmp_path, LOGISTIC)]) == 0
    assert json.loads(capsys.readouterr().out)["M"] == 400
    assert main(["stats", "--data", str(tmp_path / "missing.svm")]) == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "growsample.cli", "verify-rates", "lemma"],
                         capture_output=True, text=True, cwd=tmp_path)
    assert res.returncode == 0, res.stderr
    assert "lemma" in res.stdout


def test_sampled_gd_defaults_to_the_model_lipschitz_bound(tmp_path):
    cfg = _write(tmp_path, LOGISTIC.replace("[method:hybrid-qn]\nschedule = paper-linear",
                                            "[method:sampled-gd]\nschedule = paper-linear"))
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = _read_csv(tmp_path / "o" / "sampled-gd_seed0.csv")
    assert float(rows[-1]["gap"]) < float(rows[0]["gap"])
