import numpy as np
import pytest

from asymgame.finite import solve_finite
from asymgame.scenarios import EXTREME, EXTREME_COND_CAP, SCENARIOS, X0, scenario_model
from asymgame.stationary import value_iterate


def solve_scenario(name: str):
    cap = EXTREME_COND_CAP if name in EXTREME else 1e12
    return value_iterate(scenario_model(name), cond_cap=cap)


@pytest.fixture(scope="session")
def baseline_model():
    return scenario_model("pe-baseline")


@pytest.fixture(scope="session")
def baseline_solution(baseline_model):
    return value_iterate(baseline_model)


@pytest.fixture(scope="session")
def finite_baseline(baseline_model):
    model = baseline_model.with_horizon(200, x0_mean=np.array(X0), x0_cov=np.zeros((4, 4)))
    return solve_finite(model)


@pytest.fixture(scope="session")
def scenario_solutions():
    return {name: solve_scenario(name) for name in SCENARIOS}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion and assert on it."""

    def _report(criterion: int, ok: bool, detail: str) -> None:
        line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _ACCEPTANCE.append(line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter) -> None:
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
