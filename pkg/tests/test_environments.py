import numpy as np
import pytest

from riskrl import environments as env
from riskrl import mdp as md
from riskrl.errors import InvalidConfig, MalformedMap
from oracles import grid_outcomes, truncnorm_mc_mean


def test_three_cell_row():
    spec = env.GridSpec("S.G")
    m = env.build_gridworld(spec)
    # from the left end only E stays on the grid
    assert m.transition[0, :, 1].tolist() == [1.0] * 8
    # from the middle E and W survive: E keeps 0.93, W keeps 0.01, renormalized
    assert m.transition[1, 2, 2] == pytest.approx(0.93 / 0.94, rel=1e-14)
    assert m.transition[1, 2, 0] == pytest.approx(0.01 / 0.94, rel=1e-14)
    assert np.allclose(m.transition.sum(axis=2)[m.admissible], 1.0, atol=1e-12)


def test_interior_cell_masses():
    m = env.build_gridworld(env.GridSpec(["ggg", "gSg", "ggg"]))
    for a in range(8):
        row = np.sort(m.transition[4, a])[::-1]
        assert row[0] == pytest.approx(0.93) and np.allclose(row[1:8], 0.01) and row[8] == 0


def test_matches_brute_force(grid, grid_spec):
    outcomes, absorbing = grid_outcomes(grid_spec.map)
    P = grid.transition
    R = grid.expected_reward()
    for (x, a), succ in outcomes.items():
        ref = np.zeros(grid.n_states)
        for y, (p, _) in succ.items():
            ref[y] = p
        assert np.allclose(P[x, a], ref, atol=1e-15)
        assert R[x, a] == pytest.approx(sum(p * r for p, r in succ.values()), abs=1e-15)
    assert set(np.flatnonzero(grid.absorbing)) == absorbing


def test_absorbing_goal(grid, grid_spec):
    g = [i for i, c in enumerate("".join(grid_spec.map)) if c == "G"][0]
    assert grid.absorbing[g]
    for a in range(8):
        assert grid.outcomes(g, a) == [(1.0, g, 0.0)]


def test_recurring_mode_pays_every_step():
    m = env.build_gridworld(env.GridSpec("S.G"), absorbing_reward_mode="recurring")
    assert not m.absorbing[2]
    assert m.outcomes(2, 2)[0][2] == 1.0


def test_shipped_map_layout(grid_spec):
    rows = grid_spec.map
    r, c = grid_spec.cell_of(grid_spec.start)
    assert r == len(rows) - 1 and c == 0  # lower-left start
    text = "".join(rows)
    assert text.count("G") == 1 and text.count("B") >= 1 and text.count("g") > len(text) // 2


def test_every_built_mdp_validates(grid):
    md.validate(grid)
    md.validate(env.build_rideshare(env.RideshareConfig(), env.load_golden_transition()))


@pytest.mark.parametrize("rows", [["S.X"], ["S..", "S.."], ["..G"], ["S..", "S."], []])
def test_malformed_maps(rows):
    with pytest.raises(MalformedMap):
        env.GridSpec(rows).validate()


def test_slip_probabilities_must_sum():
    with pytest.raises(MalformedMap):
        env.GridSpec("S.G", slip=0.02).validate()


# -- surge data ------------------------------------------------------------------


def test_surge_bins():
    assert [env.price_bin(m) for m in (1.0, 1.19, 1.2, 1.59, 1.6, 1.99, 2.0, 3.5)] == [0, 0, 1, 1, 2, 2, 3, 3]


def test_constant_sequence():
    P = env.ingest_surge_csv([(t, 1.0) for t in range(5)])
    assert P[0].tolist() == [1, 0, 0, 0]
    assert np.allclose(P[1:], 0.25)  # unseen levels fall back to uniform


def test_alternating_sequence():
    P = env.ingest_surge_csv([(t, 1.0 if t % 2 == 0 else 1.4) for t in range(10)])
    assert P[0].tolist() == [0, 1, 0, 0] and P[1].tolist() == [1, 0, 0, 0]


def test_surge_errors():
    with pytest.raises(InvalidConfig):
        env.ingest_surge_csv([])
    with pytest.raises(InvalidConfig):
        env.ingest_surge_csv([(0, 0.9), (1, 1.0)])


def test_surge_csv_timestamps(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("timestamp,multiplier\n2019-01-01T05:00:00Z,1.0\n1546319100,1.5\n")
    rows = env.read_surge_csv(p)
    assert rows[0][0] == 1546318800.0 and rows[1] == (1546319100.0, 1.5)
    bad = tmp_path / "b.csv"
    bad.write_text("time,value\n1,1\n")
    with pytest.raises(InvalidConfig):
        env.read_surge_csv(bad)


def test_fixture_reproduces_published_matrix():
    P = env.ingest_surge_csv(env.read_surge_csv(env.bundled_surge_fixture()))
    golden = env.load_golden_transition()
    assert golden[0].tolist() == [0.876, 0.099, 0.017, 0.008]
    assert np.array_equal(np.round(P, 3), golden)


# -- rideshare ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def ride():
    return env.build_rideshare(env.RideshareConfig(), env.load_golden_transition())


def test_zero_horizon_forces_ride():
    m = env.build_rideshare(env.RideshareConfig(horizon=0), env.load_golden_transition())
    for level in range(4):
        assert m.admissible[level].tolist() == [False, True]


def test_point_mass_travel_time():
    cfg = env.RideshareConfig(horizon=2, travel_time=env.TravelTime(2371, 0.0, 1554, 3619), time_bins=1)
    m = env.build_rideshare(cfg, np.eye(4))
    x = env.rideshare_state(cfg, 2, 1)
    (p, y, r), = m.outcomes(x, 1)
    fare = 1.8 * (cfg.p_base + cfg.p_mile * cfg.distance + cfg.p_min * 2371 / 60)
    assert p == 1.0 and y == m.n_states - 1
    assert r == pytest.approx(cfg.reward_scale * (cfg.satisfaction(1) - fare), rel=1e-14)


def test_travel_time_bins_mean():
    tt = env.TravelTime()
    mc = truncnorm_mc_mean(tt.loc, tt.scale, tt.lower, tt.upper, 10_000_000, 0)
    bins = env.travel_time_bins(tt, 32)
    assert abs(bins.mean() - mc) / mc < 0.005
    assert np.all(np.diff(bins) > 0)
    assert tt.lower < bins[0] and bins[-1] < tt.upper


def test_rideshare_time_increases_and_terminates(ride):
    cfg = env.RideshareConfig()
    pol = md.uniform_policy(ride)
    start = np.zeros(ride.n_states)
    start[:4] = 0.25
    demos = md.sample_demonstrations(ride, pol, 2000, start, 100, 0)
    nL = 4
    for ep in demos.episodes:
        assert len(ep) <= cfg.horizon + 1
        ts = [x // nL for x, _ in ep]
        assert ts == sorted(ts) and len(set(ts)) == len(ts)
        assert ep[-1][1] == 1  # the last action is always the ride
    assert all(len(md.simulate(ride, pol, s, 100, k)) <= cfg.horizon + 1 for k, s in enumerate(range(4)))


def test_rideshare_config_validation():
    with pytest.raises(InvalidConfig):
        env.RideshareConfig(wait_reward=0.1).validate()
    with pytest.raises(InvalidConfig):
        env.RideshareConfig(price_levels=(1.0, 1.8, 1.4, 2.2)).validate()
    with pytest.raises(InvalidConfig):
        env.RideshareConfig(travel_time=env.TravelTime(loc=5000)).validate()
    with pytest.raises(InvalidConfig):
        env.build_rideshare(env.RideshareConfig(), np.full((4, 4), 0.3))


def test_rideshare_config_round_trip():
    cfg = env.RideshareConfig(horizon=4, distance=3.0)
    assert env.RideshareConfig.from_record(cfg.to_record()) == cfg
