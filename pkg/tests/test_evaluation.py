import csv
import math

import numpy as np
import pytest

from riskrl import evaluation as ev
from riskrl import forward as fw
from riskrl import value_fn as vf
from riskrl.errors import InvalidConfig, SupportMismatch
from riskrl.forward import SolverConfig
from riskrl.inverse import IRLConfig
from riskrl.mdp import FiniteMDP, Policy
from conftest import BEHAVIORS


def test_tv_report_mean_and_variance(tmp_path):
    p = Policy(np.array([[0.5, 0.5], [1.0, 0.0], [0.2, 0.8]]))
    q = Policy(np.array([[0.5, 0.5], [0.6, 0.4], [0.3, 0.7]]))
    rep = ev.policy_tv_report(p, q, [0, 2])
    assert rep.per_state.tolist() == pytest.approx([0.0, 0.1], abs=1e-15)
    assert rep.mean == pytest.approx(0.05) and rep.variance == pytest.approx(0.0025)
    path = tmp_path / "tv.csv"
    rep.write_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["state", "tv"] and [int(r[0]) for r in rows[1:]] == [0, 2]


def test_tv_report_support_mismatch():
    with pytest.raises(SupportMismatch):
        ev.policy_tv_report(Policy(np.array([[1.0, 0.0]])), Policy(np.array([[0.5, 0.5]])))
    with pytest.raises(SupportMismatch):
        ev.policy_tv_report(Policy(np.array([[1.0, 0.0]])), Policy(np.array([[1.0, 0.0, 0.0]])))


def test_identical_policies_zero_tv(grid):
    pi = fw.boltzmann_policy(fw.solve_q_fixed_point(grid, vf.entropic(0.5)), 4.0, grid)
    rep = ev.policy_tv_report(pi, pi, ev.free_states(grid))
    assert rep.mean == 0 and rep.variance == 0
    assert rep.states.size == grid.n_states - int(grid.absorbing.sum())


def test_max_likelihood_path_chain():
    m = FiniteMDP.from_outcomes(3, 2, {(0, 0): [(0.7, 1, 0.0), (0.3, 0, 0.0)], (0, 1): [(1.0, 0, 0.0)],
                                       (1, 0): [(0.5, 2, 1.0), (0.5, 0, 0.0)], (1, 1): [(1.0, 1, 0.0)],
                                       (2, 0): [(1.0, 2, 0.0)], (2, 1): [(1.0, 2, 0.0)]},
                                gamma=0.9, absorbing=[False, False, True])
    pi = Policy(np.array([[0.9, 0.1], [0.6, 0.4], [0.5, 0.5]]))
    assert len(ev.max_likelihood_path(m, pi, 0)) == 101
    # successor tie (0.5, 0.5) resolves to the lower index, so the path cycles until max_len
    path = ev.max_likelihood_path(m, pi, 0, max_len=6)
    assert path == [0, 1, 0, 1, 0, 1, 0]


def test_max_likelihood_path_absorbing_start(grid, grid_spec):
    g = int(np.flatnonzero(grid.absorbing)[0])
    assert ev.max_likelihood_path(grid, Policy(np.full((grid.n_states, 8), 1 / 8)), g) == [g]


def test_grid_paths_reach_goal(grid, grid_spec):
    for b in BEHAVIORS.values():
        pi = fw.boltzmann_policy(fw.solve_q_fixed_point(grid, vf.lprospect(*b)), 4.0, grid)
        path = ev.max_likelihood_path(grid, pi, grid_spec.start)
        assert grid.absorbing[path[-1]] and len(path) < 20


def test_power_law_recovers_exact_curve():
    x = np.array([10, 30, 100, 300, 1000])
    fit = ev.fit_power_law(x, 0.7 * x ** -0.5)
    assert fit.a == pytest.approx(0.7, rel=1e-12) and fit.b == pytest.approx(-0.5, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0)
    assert fit(100) == pytest.approx(0.07)


def test_power_law_flat_curve():
    fit = ev.fit_power_law([10, 100, 1000], [0.2, 0.2, 0.2])
    assert fit.b == pytest.approx(0.0, abs=1e-12) and fit.r2 == 1.0
    with pytest.raises(InvalidConfig):
        ev.fit_power_law([10], [0.1])


def test_sample_complexity_small(grid, grid_spec, tmp_path):
    res = ev.sample_complexity_experiment(grid, vf.entropic(0.5), [20, 500], datasets_per_size=3, restarts=2,
                                          rng_seed=1, irl_cfg=IRLConfig(max_outer_iters=50))
    assert len(res.per_dataset) == 6
    assert res.mean_tv[1] < res.mean_tv[0]
    assert np.all(res.ci_lo <= res.mean_tv) and np.all(res.mean_tv <= res.ci_hi)
    path = tmp_path / "sweep.csv"
    res.write_csv(path)
    assert path.read_text().splitlines()[0] == "size,mean_tv,ci_lo,ci_hi"
    assert set(res.summary()) >= {"a", "b", "r2", "sizes"}
    with pytest.raises(InvalidConfig):
        ev.sample_complexity_experiment(grid, vf.entropic(0.5), [0, 10])
