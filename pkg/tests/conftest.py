import pytest

from bandlab.frictionless import MertonSolution


@pytest.fixture
def standard():
    """mu=0.1, r=0.02, sigma=0.2, p=-3, T=1: Merton fraction 1/2, a(1) = 0.05."""
    return MertonSolution.from_values(0.1, 0.02, 0.2, -3.0, 1.0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
