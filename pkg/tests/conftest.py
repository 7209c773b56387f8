import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dpmonitor.threshold import ThresholdRequest, cached_quantile  # noqa: E402

REPO = Path(__file__).resolve().parents[1]

# (criterion, passed, detail) lines collected by the acceptance tests
ACCEPTANCE_LINES: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def threshold_cache() -> Path:
    """Shared threshold cache so the full-size quantiles are simulated once."""
    env = os.environ.get("DPMONITOR_CACHE")
    return Path(env) if env else REPO / ".cache" / "thresholds.txt"


@pytest.fixture(scope="session")
def q_default(threshold_cache) -> float:
    return cached_quantile(ThresholdRequest(0.05, 0.25), threshold_cache)


@pytest.fixture(scope="session")
def q_panel(threshold_cache) -> float:
    return cached_quantile(ThresholdRequest(0.0125, 0.25), threshold_cache)


@pytest.fixture(scope="session")
def scenario_result(q_default):
    """Full-size experiment (100 runs, T=100, change at 50), memoized per (scenario, n)."""
    from dpmonitor.harness import build_scenario, run_experiment

    memo = {}

    def get(scenario_id, n=750):
        key = (scenario_id, n)
        if key not in memo:
            memo[key] = run_experiment(build_scenario(scenario_id), reps=100, n=n, q=q_default, seed=0)
        return memo[key]

    return get
