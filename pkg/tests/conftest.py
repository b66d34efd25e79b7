import numpy as np
import pytest

from greybox_lcb.problems import example1_problem, oscillator_ilc_problem

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def example1():
    return example1_problem()


@pytest.fixture(scope="session")
def ilc():
    return oscillator_ilc_problem()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance_report():
    """Record one pass/fail line for the terminal summary."""

    def report(criterion, passed, detail):
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
