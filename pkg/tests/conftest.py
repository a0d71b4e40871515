import numpy as np
import pytest

from radonlab.grid import Grid
from radonlab.kernels import make_cancelling_family
from radonlab.operators import OperatorFactory
from radonlab.scenarios import get_scenario


@pytest.fixture(scope="session")
def heisenberg():
    return get_scenario("heisenberg")


@pytest.fixture(scope="session")
def heis_factory(heisenberg):
    grid = Grid.uniform(heisenberg.box, 9)
    fam = make_cancelling_family((1, 1), 0.25, (2, 2))
    return OperatorFactory(heisenberg.gamma, grid, family=fam)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; the test still asserts on the verdict."""
    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        CRITERIA[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[number])
