import pytest

from v2psim.engine import scenario_fading
from v2psim.scenario import ScenarioConfig, validate_config


@pytest.fixture(scope="session")
def default_cfg():
    return validate_config(ScenarioConfig())


@pytest.fixture(scope="session")
def fading(default_cfg):
    return scenario_fading(default_cfg)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
