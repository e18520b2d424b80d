"""Shared fixtures: the reference experiment runs and acceptance reporting.

The reference scenario (5 agents, 6 slots, seed 1) is solved once per
session in every mode; most experiment-level tests only read the cached
metrics.  Tests marked ``acceptance(num, title)`` additionally report
one PASS/FAIL line per criterion at the end of the run.
"""

from __future__ import annotations

import time
from dataclasses import replace

import pytest

from proxest.harness import ExperimentConfig, compute_oracle, run_experiment


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "acceptance(num, title): ties a test to one numbered acceptance criterion",
    )
    config._acceptance_results = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    num, title = marker.args
    entry = item.config._acceptance_results.setdefault(
        num, {"title": title, "status": "PASS"}
    )
    if report.failed:
        entry["status"] = "FAIL"
    elif report.skipped and entry["status"] != "FAIL":
        entry["status"] = "SKIP"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance_results", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        entry = results[num]
        terminalreporter.write_line(f"C{num:<2d} {entry['status']:<4s} {entry['title']}")


@pytest.fixture(scope="session")
def reference_config():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def reference_oracle(reference_config):
    return compute_oracle(reference_config)


@pytest.fixture(scope="session")
def reference_runs(reference_config, reference_oracle):
    """Metrics for every mode on the reference scenario, plus wall times.

    Keys: "exact", "full" (estimated, unlimited memory), and the memory
    limits 1, 5, 10.  ``seconds[key]`` is the wall-clock time of that
    run alone (the oracle is shared and precomputed).
    """
    runs = {}
    seconds = {}

    def go(key, **overrides):
        cfg = replace(reference_config, **overrides)
        started = time.perf_counter()
        runs[key] = run_experiment(cfg, oracle=reference_oracle)
        seconds[key] = time.perf_counter() - started

    go("exact", mode="exact")
    go("full", mode="estimated", memory_limit=None)
    for limit in (1, 5, 10):
        go(limit, mode="estimated", memory_limit=limit)
    return {"runs": runs, "seconds": seconds}
