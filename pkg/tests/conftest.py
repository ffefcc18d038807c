from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from reluctsim.fixtures import valve_params
from reluctsim.hybrid import rest_state
from reluctsim.hysteresis import demag_history

settings.register_profile(
    "default", deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow], print_blob=True
)
settings.load_profile("default")

CRITERIA: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])


@pytest.fixture(scope="session")
def valve():
    return valve_params()


@pytest.fixture(scope="session")
def rest(valve):
    return rest_state(valve, demag_history(100))
