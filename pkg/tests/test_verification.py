import math

import pytest

import growsample.verification as ver
from growsample.verification import Check, SuiteReport, run_suite


def test_report_lines_and_status():
    rep = SuiteReport("demo", [Check("a", True, 0.5, 3, "fine"), Check("b", False, -0.1)])
    assert not rep.passed
    lines = rep.lines()
    assert lines[0].startswith("PASS demo/a") and "at 3" in lines[0] and "(fine)" in lines[0]
    assert lines[1].startswith("FAIL demo/b")
    d = rep.to_dict()
    assert d["passed"] is False and len(d["checks"]) == 2


def test_run_suite_rejects_unknown_name():
    with pytest.raises(KeyError):
        run_suite("nope")


@pytest.mark.parametrize("name", ["lemma", "strong", "weak", "sublinear", "sampling"])
def test_fast_suites_pass(name):
    rep = run_suite(name)
    assert rep.passed, rep.lines()
    assert rep.seconds > 0 and all(math.isfinite(c.worst_margin) for c in rep.checks)


def test_extra_suites_pass():
    for name in ("deterministic-bound", "geometric-schedule"):
        rep = run_suite(name)
        assert rep.passed, rep.lines()


def test_lemma_suite_detects_a_missing_error_term(monkeypatch):
    monkeypatch.setattr(ver, "lemma_bound", lambda g, e, mu, L: (1 - mu / L) * g)
    rep = ver.verify_lemma(iters=50)
    assert not any(c.passed for c in rep.checks)
    assert all(line.startswith("FAIL") for line in rep.lines())


def test_sampling_suite_detects_a_wrong_identity(monkeypatch):
    monkeypatch.setattr(ver, "expected_residual_sq", lambda S, M, b: (M - b) / M * S / b * 1.01)
    assert not ver.verify_sampling_identity(Ms=range(3, 5)).passed


def test_strong_suite_rejects_rho_above_mu_over_L():
    with pytest.raises(ValueError):
        ver.verify_strong(rho_fraction=1.5)


def test_weak_suite_handles_slow_noise():
    # the fitted rate tracks gamma even when gamma dominates 1 - mu/L
    rep = ver.verify_weak(gammas=(0.99,), iters=500)
    assert rep.passed, rep.lines()
