import numpy as np
import pytest

from cbfda.fields import Grid, random_divfree_field

ACCEPTANCE_LINES = []


def record_criterion(num, description, ok, detail=""):
    line = f"criterion {num:>2} [{'PASS' if ok else 'FAIL'}] {description}"
    if detail:
        line += f" -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def grid32():
    return Grid(2, 32)


@pytest.fixture(scope="session")
def grid16():
    return Grid(2, 16)


@pytest.fixture(scope="session")
def grid3d():
    return Grid(3, 16)


def make_field(grid, seed, rms=0.3, slope=-4.0):
    return random_divfree_field(grid, slope, seed, rms=rms)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
