import numpy as np
import pytest
from scipy import stats

from inclusion_capacity.config_space import enumerate_space
from inclusion_capacity.errors import EventCapExceeded
from inclusion_capacity.graph_model import metastable_hierarchy
from inclusion_capacity.simulator import (
    JumpTable, SimConfig, d_schedule, empirical_vs_magic, simulate_until, timescale_census,
)

import sample_graphs as sg


def two_site(rate=1.5):
    return sg.from_conductances("xy", dict(x=1, y=1), [("x", "y", rate)])


def test_single_particle_exponential_law():
    g = two_site()
    d = 0.3
    cs = enumerate_space(g, 1, d)
    sample = simulate_until(cs, [1, 0], [[0, 1]], SimConfig(seed=7, replicas=4000))
    rate = 1 * (d + 0) * g.rates[0, 1]
    assert np.all(sample.events == 1)
    assert stats.kstest(sample.times, "expon", args=(0, 1 / rate)).pvalue > 1e-3
    assert abs(sample.mean - 1 / rate) <= 4 * sample.stderr


def test_deterministic_and_order_free():
    cs = enumerate_space(sg.three_site(), 6, 0.4)
    start, target = cs.xi(0), [cs.xi(2)]
    a = simulate_until(cs, start, target, SimConfig(seed=3, replicas=20))
    b = simulate_until(cs, start, target, SimConfig(seed=3, replicas=20))
    c = simulate_until(cs, start, target, SimConfig(seed=3, replicas=8))
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.times[:8], c.times)
    d = simulate_until(cs, start, target, SimConfig(seed=4, replicas=20))
    assert not np.array_equal(a.times, d.times)


def test_jump_table_probabilities():
    cs = enumerate_space(sg.path5(), 3, 0.2)
    table = JumpTable.from_space(cs)
    src, dst, rate = cs.edge_arrays()
    s = int(src[0])
    mine = src == s
    total = rate[mine].sum()
    assert table.total[s] == pytest.approx(total)
    us = (np.arange(20000) + 0.5) / 20000
    hits = np.array([table.step(s, u) for u in us])
    for t, r in zip(dst[mine], rate[mine]):
        assert np.mean(hits == t) == pytest.approx(r / total, abs=1e-3)


def test_magic_formula_agreement_small():
    cs = enumerate_space(sg.three_site(), 5, 0.5)
    res = empirical_vs_magic(cs, cs.xi(0), [cs.xi(2)], SimConfig(seed=1, replicas=800))
    assert res["magic"] == pytest.approx(res["direct"], rel=1e-8)
    assert res["passed"]


def test_predicate_targets():
    cs = enumerate_space(sg.three_site(), 4, 0.5)
    sample = simulate_until(cs, cs.xi(0), lambda st: st[:, 2] >= 2, SimConfig(seed=0, replicas=50))
    assert sample.times.min() > 0


def test_event_cap():
    cs = enumerate_space(sg.three_site(), 8, 0.1)
    with pytest.raises(EventCapExceeded):
        simulate_until(cs, cs.xi(0), [cs.xi(2)], SimConfig(seed=0, replicas=1, max_events=3))


def test_empty_targets_rejected():
    cs = enumerate_space(sg.three_site(), 3, 0.1)
    with pytest.raises(ValueError):
        simulate_until(cs, cs.xi(0), [], SimConfig(replicas=1))


def test_bad_config():
    with pytest.raises(ValueError):
        SimConfig(replicas=0)


def test_schedule():
    assert d_schedule(10, 0.3) == pytest.approx(0.3 / np.log(10 + np.e))


def test_census_law():
    g = sg.three_site()
    cs = enumerate_space(g, 6, 0.3)
    res = timescale_census(cs, metastable_hierarchy(g), 0, 2.0, SimConfig(seed=2, replicas=200))
    assert sum(res["law"].values()) == pytest.approx(1.0)
    assert set(res["law"]) == {"x", "y", "outside"}
    assert 0.0 <= res["outside_fraction"] <= 1.0
    short = timescale_census(cs, metastable_hierarchy(g), 0, 1e-6, SimConfig(seed=2, replicas=50))
    assert short["law"]["x"] == 1.0


def test_start_inside_target():
    cs = enumerate_space(sg.three_site(), 4, 0.5)
    sample = simulate_until(cs, cs.xi(0), [cs.xi(0), cs.xi(2)], SimConfig(replicas=3))
    assert np.all(sample.times == 0) and np.all(sample.events == 0)
    res = empirical_vs_magic(cs, cs.xi(0), [cs.xi(0)], SimConfig(replicas=3))
    assert res["magic"] == res["direct"] == res["mean"] == 0.0


def test_stderr_shrinks_like_root_replicas():
    cs = enumerate_space(sg.three_site(), 4, 0.5)
    small = simulate_until(cs, cs.xi(0), [cs.xi(2)], SimConfig(seed=5, replicas=400))
    big = simulate_until(cs, cs.xi(0), [cs.xi(2)], SimConfig(seed=5, replicas=1600))
    assert 1.6 < small.stderr / big.stderr < 2.5


def test_edge_flux_balance_long_run():
    # long single trajectory: jumps x->a and a->x alternate up to boundary effects
    g = sg.three_site()
    cs = enumerate_space(g, 1, 0.5)
    table = JumpTable.from_space(cs)
    rng = SimConfig(seed=9).rng(0)
    state, counts = cs.xi(0), {}
    for u in rng.random(20000):
        nxt = table.step(state, u)
        counts[(state, nxt)] = counts.get((state, nxt), 0) + 1
        state = nxt
    x, a = cs.xi(0), cs.xi(1)
    assert abs(counts[(x, a)] - counts[(a, x)]) <= 1
