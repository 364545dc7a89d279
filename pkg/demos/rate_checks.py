"""Runs every convergence verification suite and prints one line per check.

    python3 demos/rate_checks.py
"""
import sys

from growsample.verification import EXTRA_SUITES, SUITES, run_suite

ok = True
for name in [*SUITES, *EXTRA_SUITES]:
    rep = run_suite(name)
    ok &= rep.passed
    print(f"# {name} ({rep.seconds:.2f}s)")
    for line in rep.lines():
        print(line)
sys.exit(0 if ok else 1)
