import math

import numpy as np
import pytest
from hypothesis import settings

from vimseq.params import default_params

# numba compiles on first call, so per-example deadlines are meaningless here
settings.register_profile("repo", deadline=None, max_examples=60)
settings.load_profile("repo")

X0 = np.array([0.0, 0.0, 0.0, math.pi / 24, 0.0, 0.0])


@pytest.fixture(scope="session")
def params():
    return default_params()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed after the run
CRITERIA: dict = {}


@pytest.fixture(scope="session")
def verdict():
    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        CRITERIA[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
