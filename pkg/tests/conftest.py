import numpy as np
import pytest

from mumimo import ScenarioParams, SystemConfig, build_scenario

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_scenario():
    return build_scenario(SystemConfig(M=16, K=3, N=2), seed=3)


@pytest.fixture(scope="session")
def reference_scenario():
    """K=10, N=3, M=128 with the default cell."""
    return build_scenario(SystemConfig(M=128, K=10, N=3), ScenarioParams(), seed=1)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
