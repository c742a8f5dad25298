from __future__ import annotations

import pytest

from pointkg.scenarios import linear_scenario, two_site_scenario

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def linear_run():
    sc = linear_scenario(horizon=2.0)
    src = sc.sources()
    return sc, src, sc.solve(sources=src)


@pytest.fixture(scope="session")
def two_site_run():
    sc = two_site_scenario(horizon=2.0)
    src = sc.sources()
    return sc, src, sc.solve(sources=src)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
