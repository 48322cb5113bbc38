import numpy as np
import pytest

from ilbench.mdp import DetTabular, TabularMdp


@pytest.fixture
def chain():
    """Two states, two actions, H=2; action 0 in state 0 moves to state 1 surely."""
    P = np.zeros((2, 2, 2))
    P[0, 0, 1] = 1.0
    P[0, 1, 0] = 1.0
    P[1, :, 1] = 1.0
    R = np.array([[0.0, 0.5], [1.0, 0.0]])
    return TabularMdp([1.0, 0.0], P, R, 2)


@pytest.fixture
def single_state():
    """One state, two actions, H=2; reward 1 for action 0."""
    P = np.ones((1, 2, 1))
    return TabularMdp([1.0], P, [[1.0, 0.0]], 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def det(table, A):
    return DetTabular(np.asarray(table), A)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Record a one-line verdict for an acceptance criterion; printed in the terminal summary."""

    def report(criterion: str, ok: bool, detail: str) -> None:
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
