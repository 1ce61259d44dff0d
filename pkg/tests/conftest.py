import numpy as np
import pytest

from cbdm.data import Dataset


def make_data(n=20, d_x=2, seed=0, outcomes=True):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d_x))
    t = 0.5 * x[:, 0] + rng.normal(size=n)
    y = t + x.sum(axis=1) + 0.1 * rng.normal(size=n) if outcomes else None
    return Dataset(t, x, y, ("t",), tuple(f"x{k + 1}" for k in range(d_x)), "y" if outcomes else None)


@pytest.fixture
def small_data():
    return make_data()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
