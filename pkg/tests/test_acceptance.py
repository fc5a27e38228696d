"""Acceptance criteria, one test each, run at their stated tolerances.

Each test prints a ``PASS``/``FAIL`` line; the lines are also collected into
the terminal summary.
"""
import os

import pytest

from glab.experiments.runners import run_named

from conftest import ACCEPTANCE_LINES

WORKERS = int(os.environ.get("GLAB_WORKERS", str(min(4, os.cpu_count() or 1))))

CRITERIA = [
    (1, "specialized-asymmetry identity", {"experiment": "identity", "samples": 500, "max_range": 8, "tol": 1e-10}, 1),
    (2, "exact stationarity", {"experiment": "stationarity", "exact_sizes": list(range(4, 11)),
                               "densities": [-0.5, 0.0, 0.5], "tol": 1e-9}, 60),
    (3, "height and transform consistency", {"experiment": "height", "events": 1_000_000, "tol": 1e-9}, 60),
    (4, "heat kernel exactness", {"experiment": "kernel-bounds"}, 30),
    (5, "variance bound for time averages", {"experiment": "kv", "sizes": [4, 6, 8]}, 120),
    (6, "disjoint-support averaging", {"experiment": "disjoint", "n": 12, "J": [2, 3, 4]}, 120),
    (7, "Azuma tails", {"experiment": "azuma", "n": 14}, 60),
    (8, "diffusive gap and log-Sobolev", {"experiment": "lsi", "sizes": list(range(3, 11)), "densities": 1000}, 300),
    (9, "entropy production", {"experiment": "entropy-production"}, 300),
    (10, "localization coupling", {"experiment": "coupling", "replicas": 1000}, 600),
    (11, "time regularity", {"experiment": "holder", "N": 128, "replicas": 200}, 900),
    (12, "multiscale decay", {"experiment": "schedule-decay", "schedule": "D1B2a", "replicas": 200}, 900),
    (13, "desk-scale universality trend", {"experiment": "kpz-compare", "Ns": [32, 64, 128], "T": 0.5,
                                           "replicas": 1000}, 3600),
    (14, "SHE solver sanity", {"experiment": "she"}, 600),
]


@pytest.mark.parametrize("number,title,cfg,budget", CRITERIA, ids=[f"criterion{c[0]:02d}" for c in CRITERIA])
def test_criterion(number, title, cfg, budget):
    result, wall = run_named({**cfg, "workers": WORKERS}, 20261015)
    failed = [f"{c.name} ({c.detail})" for c in result.checks if not c.passed]
    in_budget = wall < budget
    ok = not failed and in_budget
    details = "; ".join(f"{c.name}: {c.detail}" for c in result.checks)
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} [{wall:.1f}s / {budget}s] {details}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert not failed, f"criterion {number} failed: {failed}"
    assert in_budget, f"criterion {number} took {wall:.1f}s, budget {budget}s"
