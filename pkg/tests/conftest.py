import math

import numpy as np
import pytest

from hypwr.fixtures import THETA_STAR, load_fixture, s1
from hypwr.system_model import HyperbolicSystem

_ACCEPTANCE: list = []

A1 = [[0.0, 1.0], [1.0, 0.0]]
A2 = [[1.0, 0.0], [0.0, -1.0]]


def s1_const(b) -> HyperbolicSystem:
    """Constant-coefficient S1 with an arbitrary boundary row."""
    return HyperbolicSystem.constant([A1, A2], [b], name="s1")


@pytest.fixture(scope="session")
def sys_s1():
    return s1(math.pi / 4)


@pytest.fixture(scope="session")
def sys_wr():
    return load_fixture("s1_wr")


@pytest.fixture(scope="session")
def sys_ukl():
    return s1(0.0)


@pytest.fixture(scope="session")
def sys_s1v():
    return load_fixture("s1v")


@pytest.fixture(scope="session")
def sys_s2():
    return load_fixture("s2")


@pytest.fixture(scope="session")
def theta_star():
    return THETA_STAR


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def acceptance():
    """Recorder for the acceptance lines printed in the terminal summary."""

    def record(number: int, title: str, ok: bool, detail: str = ""):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        _ACCEPTANCE.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)
