import pytest
from hypothesis import settings

from ecodrive.dp import CostWeights, GridSpec, solve_full_route
from ecodrive.powertrain import default_plant
from ecodrive.route import flat_route

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def plant():
    return default_plant()


@pytest.fixture(scope="session")
def short_route():
    return flat_route(300.0, v_max=15.6)


@pytest.fixture(scope="session")
def short_table(short_route, plant):
    return solve_full_route(short_route, GridSpec(), CostWeights(0.7), plant)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
