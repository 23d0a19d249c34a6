import math

import numpy as np
import pytest

from radopf.cases import inexact_two_bus, three_bus_line, two_bus


@pytest.fixture
def fix2():
    """2-bus fixture with P_max at bus 2 = -0.5."""
    return two_bus(p_max_2=-0.5)


@pytest.fixture
def free2():
    return two_bus()


@pytest.fixture
def line3():
    return three_bus_line()


@pytest.fixture
def inexact2():
    return inexact_two_bus()


def bisect(fun, a, b, iters=200):
    """Root of a continuous function with a sign change on [a, b]."""
    fa = fun(a)
    for _ in range(iters):
        m = 0.5 * (a + b)
        fm = fun(m)
        if (fm > 0) == (fa > 0):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)


LOSS_2BUS_Z = (6 - math.sqrt(11)) / 10
LOSS_2BUS = 2 * (1 - math.sqrt(1 - LOSS_2BUS_Z**2))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
