import numpy as np
import pytest

from vecedge.scenario import ScenarioConfig, desk_config


@pytest.fixture
def cfg():
    return ScenarioConfig()


@pytest.fixture
def desk():
    return desk_config()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
