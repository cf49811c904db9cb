import json

import numpy as np
import pytest

from riskrl import evaluation as ev
from riskrl import mdp as md
from riskrl.errors import EmptyDemonstrations, InvalidMDP, InvalidPolicy
from riskrl.mdp import DemonstrationSet, FiniteMDP, Policy, QTable
from riskrl import value_fn as vf


def chain3():
    """0 -> 1 -> 2 deterministically; 2 absorbing."""
    return FiniteMDP.from_outcomes(3, 1, {(0, 0): [(1.0, 1, 1.0)], (1, 0): [(1.0, 2, 1.0)], (2, 0): [(1.0, 2, 0.0)]},
                                   gamma=0.9, absorbing=[False, False, True])


def raw_mdp(prob, reward=1.0):
    """A 1-state 1-action MDP with an arbitrary (possibly invalid) probability array."""
    prob = np.asarray(prob, dtype=float).reshape(1, 1, -1)
    k = prob.shape[-1]
    return FiniteMDP(admissible=np.ones((1, 1), bool), out_next=np.zeros((1, 1, k), int), out_prob=prob,
                     out_reward=np.full((1, 1, k), reward), gamma=0.9, absorbing=np.zeros(1, bool))


def test_self_loop_valid():
    md.validate(FiniteMDP.from_outcomes(1, 1, {(0, 0): [(1.0, 0, 0.5)]}, gamma=0.5))


def test_row_sum_violation_named():
    with pytest.raises(InvalidMDP) as exc:
        md.validate(raw_mdp([0.9]))
    assert "(x=0, a=0)" in str(exc.value)


def test_negative_probability():
    with pytest.raises(InvalidMDP) as exc:
        md.validate(raw_mdp([1.2, -0.2]))
    assert any("negative" in p for p in exc.value.problems)


def test_all_problems_reported():
    bad = FiniteMDP(admissible=np.array([[True], [False]]), out_next=np.zeros((2, 1, 1), int),
                    out_prob=np.array([[[0.5]], [[0.0]]]), out_reward=np.zeros((2, 1, 1)), gamma=1.5,
                    absorbing=np.zeros(2, bool))
    with pytest.raises(InvalidMDP) as exc:
        md.validate(bad)
    assert len(exc.value.problems) >= 4  # gamma, row sum, no admissible action, M = 0


def test_absorbing_must_be_zero_reward_loop():
    m = FiniteMDP.from_outcomes(2, 1, {(0, 0): [(1.0, 1, 1.0)], (1, 0): [(1.0, 1, 0.5)]}, gamma=0.9,
                                absorbing=[False, True])
    with pytest.raises(InvalidMDP):
        md.validate(m)


def test_reward_bound_and_transition(grid):
    assert grid.reward_bound == 1.0
    assert np.allclose(grid.transition.sum(axis=2), 1.0, atol=1e-12)


def test_mdp_file_round_trip(tmp_path, grid):
    path = tmp_path / "grid.json"
    grid.save(path)
    back = FiniteMDP.load(path)
    assert np.array_equal(back.admissible, grid.admissible)
    assert np.array_equal(back.transition, grid.transition)
    assert np.array_equal(back.expected_reward(), grid.expected_reward())
    rec = json.loads(path.read_text())
    assert {"states", "actions", "admissible", "transition", "rewards", "gamma", "absorbing"} <= set(rec)


def test_file_entries_without_next_are_products():
    rec = {"states": [0, 1], "actions": [0], "admissible": [[0], [0]],
           "transition": [0.5, 0.5, 0.0, 1.0], "gamma": 0.9, "absorbing": [1],
           "rewards": [{"x": 0, "a": 0, "entries": [{"prob": 0.25, "r": 2.0}, {"prob": 0.75, "r": -1.0}]},
                       {"x": 1, "a": 0, "entries": [{"prob": 1.0, "r": 0.0}]}]}
    m = FiniteMDP.from_record(rec)
    md.validate(m)
    assert m.expected_reward()[0, 0] == pytest.approx(0.25 * 2 - 0.75)
    assert len(m.outcomes(0, 0)) == 4


# -- policies and tables ------------------------------------------------------


def test_policy_rejects_inadmissible_mass():
    m = FiniteMDP.from_outcomes(1, 2, {(0, 0): [(1.0, 0, 1.0)]}, gamma=0.5)
    with pytest.raises(InvalidPolicy):
        Policy(np.array([[0.5, 0.5]])).validate(m)
    Policy(np.array([[1.0, 0.0]])).validate(m)


def test_policy_row_sum():
    with pytest.raises(InvalidPolicy):
        Policy(np.array([[0.5, 0.4]])).validate()


def test_qtable_round_trip():
    q = QTable(np.arange(6.0).reshape(3, 2), vf.entropic(0.3), {"iterations": 4})
    back = QTable.from_record(json.loads(json.dumps(q.to_record())))
    assert np.array_equal(back.values, q.values) and back.spec == q.spec


# -- simulation -------------------------------------------------------------------


def test_simulate_chain():
    traj = md.simulate(chain3(), Policy(np.ones((3, 1))), 0, 10, 0)
    assert [(s.x, s.x_next) for s in traj] == [(0, 1), (1, 2)]


def test_simulate_absorbing_start():
    assert md.simulate(chain3(), Policy(np.ones((3, 1))), 2, 10, 0) == []


def test_simulate_deterministic_given_seed(grid, grid_spec):
    pol = md.uniform_policy(grid)
    a = md.simulate(grid, pol, grid_spec.start, 50, 123)
    b = md.simulate(grid, pol, grid_spec.start, 50, 123)
    c = md.simulate(grid, pol, grid_spec.start, 50, 124)
    assert a == b and a != c


def test_simulate_respects_kernel():
    probs = [0.5, 0.3, 0.15, 0.05]
    m = FiniteMDP.from_outcomes(4, 1, {(x, 0): [(p, y, 0.1 * y) for y, p in enumerate(probs)] for x in range(4)},
                                gamma=0.5)
    n = 100_000
    traj = md.simulate(m, Policy(np.ones((4, 1))), 0, n, 7)
    freq = np.bincount([s.x_next for s in traj], minlength=4) / n
    assert np.abs(freq - probs).sum() <= ev.dkw_bound_tight(n, 4, 0.01)


# -- demonstrations -------------------------------------------------------------------


def test_empty_demonstrations(grid, grid_spec):
    d = md.sample_demonstrations(grid, md.uniform_policy(grid), 0, grid_spec.start, 10, 0)
    assert d.N == 0
    with pytest.raises(EmptyDemonstrations):
        md.empirical_policy(d)


def test_deterministic_demos_follow_one_path():
    d = md.sample_demonstrations(chain3(), Policy(np.ones((3, 1))), 5, 0, 10, 0)
    assert d.counts[:, 0].tolist() == [5, 5, 0]
    assert d.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_empirical_policy_counts():
    d = DemonstrationSet(([(0, 0), (0, 0), (0, 0), (0, 1)],), 2, 2)
    pi = md.empirical_policy(d)
    assert pi.probs[0].tolist() == [0.75, 0.25]
    assert not pi.defined[1]
    single = md.empirical_policy(DemonstrationSet(([(1, 1)],), 2, 2))
    assert single.probs[1, 1] == 1.0


def test_demonstrations_file_round_trip(tmp_path, grid, grid_spec):
    d = md.sample_demonstrations(grid, md.uniform_policy(grid), 30, grid_spec.start, 20, 5)
    path = tmp_path / "demos.jsonl"
    d.save(path)
    first = path.read_bytes()
    back = DemonstrationSet.load(path, grid.n_states, grid.n_actions)
    assert back.episodes == d.episodes and np.array_equal(back.counts, d.counts)
    back.save(path)
    assert path.read_bytes() == first
    rec = json.loads(path.read_text().splitlines()[0])
    assert set(rec) == {"episode", "t", "x", "a"}


def test_empirical_policy_within_dkw():
    m = FiniteMDP.from_outcomes(2, 3, {(0, a): [(0.5, 0, 0.1), (0.5, 1, 0.0)] for a in range(3)} |
                                {(1, a): [(1.0, 1, 0.0)] for a in range(3)}, gamma=0.5, absorbing=[False, True])
    pi = Policy(np.array([[0.6, 0.3, 0.1], [1 / 3, 1 / 3, 1 / 3]]))
    d = md.sample_demonstrations(m, pi, 100_000, 0, 50, 3)
    n0 = d.counts[0].sum()
    est = md.empirical_policy(d).probs[0]
    assert np.abs(est - pi.probs[0]).sum() <= ev.dkw_bound(int(n0), 3, 0.01)
