import numpy as np
import pytest

from riskrl import environments as env
from riskrl import value_fn as vf
from riskrl.mdp import FiniteMDP

# Behavior parameter sets {k-, k+, zeta-, zeta+}
BEHAVIORS = {
    1: (0.1, 1.0, 0.5, 1.5),
    2: (1.0, 1.0, 1.0, 1.0),
    3: (1.0, 1.0, 1.1, 0.9),
    4: (5.0, 1.0, 1.1, 0.8),
    5: (5.0, 1.0, 1.5, 0.7),
}


@pytest.fixture(scope="session")
def grid_spec():
    return env.GridSpec(env.default_map())


@pytest.fixture(scope="session")
def grid(grid_spec):
    return env.build_gridworld(grid_spec)


def bandit(outcomes, gamma=0.5):
    """One decision state with the given (prob, reward) outcomes, then an absorbing state."""
    return FiniteMDP.from_outcomes(
        2, 1, {(0, 0): [(p, 1, r) for p, r in outcomes], (1, 0): [(1.0, 1, 0.0)]},
        gamma=gamma, absorbing=[False, True],
    )


def self_loop(reward=1.0, gamma=0.5):
    return FiniteMDP.from_outcomes(1, 1, {(0, 0): [(1.0, 0, reward)]}, gamma=gamma)


def two_armed(gamma=0.5):
    """Action 0 safe (0.5 for sure), action 1 risky (+-1 w.p. 1/2)."""
    return FiniteMDP.from_outcomes(
        2, 2,
        {(0, 0): [(1.0, 1, 0.5)], (0, 1): [(0.5, 1, 1.0), (0.5, 1, -1.0)],
         (1, 0): [(1.0, 1, 0.0)], (1, 1): [(1.0, 1, 0.0)]},
        gamma=gamma, absorbing=[False, True],
    )


def random_lprospect(rng):
    return vf.lprospect(rng.uniform(0.2, 5), rng.uniform(0.2, 5), rng.uniform(0.5, 1.8), rng.uniform(0.5, 1.8))


def random_entropic(rng):
    lam = rng.uniform(0.05, 1.0) * rng.choice([-1, 1])
    return vf.entropic(lam)


# one (criterion, passed, detail) row per acceptance criterion, printed after the run
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
