import numpy as np
import pytest

from surfnse.fem import TraceSpace

_SPACES = {}


def sphere_space(level: int) -> TraceSpace:
    """Session cache of sphere trace spaces; building level 4 takes seconds."""
    if level not in _SPACES:
        _SPACES[level] = TraceSpace.sphere(level)
    return _SPACES[level]


@pytest.fixture(scope="session")
def space1():
    return sphere_space(1)


@pytest.fixture(scope="session")
def space2():
    return sphere_space(2)


@pytest.fixture(scope="session")
def space3():
    return sphere_space(3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def report(number: int, title: str, ok: bool, detail: str) -> None:
    """Record and print one pass/fail line for an acceptance criterion."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
