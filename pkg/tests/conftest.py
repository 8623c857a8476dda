import sys
from importlib import resources
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mavdesign.scenario import load_design, load_scenario  # noqa: E402

DATA = Path(str(resources.files("mavdesign") / "data"))

# Lines registered by the acceptance suite, printed after the run.
ACCEPTANCE_LINES = {}


def bundled_scenario(name):
    return load_scenario(DATA / "scenarios" / f"{name}.json")


def bundled_design(name):
    return load_design(DATA / "designs" / f"{name}.json")


@pytest.fixture(scope="session")
def emax_sc():
    return bundled_scenario("emax_ed06")


@pytest.fixture(scope="session")
def logistic_sc():
    return bundled_scenario("logistic_auc")


@pytest.fixture(scope="session")
def xi_star_a():
    return bundled_design("xi_star_A")


@pytest.fixture(scope="session")
def xi_1():
    return bundled_design("xi_1")


@pytest.fixture(scope="session")
def xi_2():
    return bundled_design("xi_2")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
