import pytest

from conicgeom import cli


@pytest.fixture(scope="session")
def zoo():
    """All bundled cones keyed by name."""
    return {name: cli.load_cone(name) for name in cli.zoo_names()}


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
