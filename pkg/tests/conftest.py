"""Shared fixtures and independent reference implementations for the tests."""

from functools import lru_cache

import numpy as np
import pytest

from xorirl.constraints import ConstraintSet, ExactlyOneOf, ForbiddenStates
from xorirl.mdp import GridWorldSpec, Mdp, build_gridworld


@lru_cache(maxsize=None)
def delannoy(m: int, n: int) -> int:
    """Monotone lattice paths with unit right, up and diagonal steps."""
    if m == 0 or n == 0:
        return 1
    return delannoy(m - 1, n) + delannoy(m, n - 1) + delannoy(m - 1, n - 1)


def binomial(n: int, k: int) -> int:
    out = 1
    for i in range(1, k + 1):
        out = out * (n - k + i) // i
    return out


def grid(w, h=None, actions=("up", "right", "diag"), features="distance", discount=1.0):
    spec = GridWorldSpec(w, h or w, actions, (0, 0), None, features, discount=discount)
    return build_gridworld(spec)


def chain_mdp(p_slip=0.3):
    """Three-state stochastic chain: ``go`` may slip back, ``jump`` is safe but longer."""
    states = ("a", "b", "g")
    transition = {
        ("a", "go"): {"b": 1.0 - p_slip, "a": p_slip},
        ("a", "jump"): {"b": 1.0},
        ("b", "go"): {"g": 1.0},
    }
    return Mdp(states, ("go", "jump"), transition, {"a": 1.0}, 1.0, "g")


@pytest.fixture
def grid4():
    return grid(4)


@pytest.fixture
def grid4_constraints():
    return ConstraintSet((ForbiddenStates([(1, 2)]), ExactlyOneOf([(1, 1), (2, 1)])))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def report(criterion: int, ok: bool, detail: str) -> bool:
    """Record one acceptance verdict; the lines are printed in the terminal summary."""
    ACCEPTANCE_LINES.append((criterion, f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}"))
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
