from __future__ import annotations

import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascadelab import (ConfigError, Graph, IsolatedNodeError, ResponseSpec, SimConfig, SimState, Stage,
                        Threshold, UpdateMode, final_state_oracle, generate_er, peer_pressure, response,
                        run, seed, update_node)
from cascadelab.contagion import run_realization
from conftest import four_five_graph


def complete(n):
    return Graph.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def path(n):
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def recount(g, stages):
    adj = g.adjacency
    m1 = [sum(1 for u in adj[v] if stages[u] >= 1) for v in range(g.node_count)]
    m2 = [sum(1 for u in adj[v] if stages[u] == 2) for v in range(g.node_count)]
    return m1, m2


# --- response ---------------------------------------------------------------------


@pytest.mark.parametrize("args,expected", [((2, 1, 4, 0.5), 0.625), ((0, 0, 7, 3.0), 0.0), ((5, 5, 5, 2.0), 3.0)])
def test_peer_pressure(args, expected):
    assert peer_pressure(*args) == pytest.approx(expected)


def test_peer_pressure_isolated():
    with pytest.raises(IsolatedNodeError):
        peer_pressure(0, 0, 0, 1.0)


def test_fraction_threshold_inclusive():
    spec = ResponseSpec.fraction_uniform(0.15, 0.3, 0.0)
    assert response(spec, 1, 3, 0, 20) == 1.0
    assert response(spec, 1, 2, 0, 20) == 0.0


def test_count_threshold_steps():
    assert response(ResponseSpec.count_uniform(1, 5, 0.25), 2, 4, 4, 4) == 1.0
    assert response(ResponseSpec.count_uniform(1, 5, 0.24), 2, 4, 4, 4) == 0.0


def test_distributed_cdf_at_mean():
    spec = ResponseSpec.distributed(Threshold(1.0), Threshold(5.0, 0.1), 0.0, count_based=True)
    assert response(spec, 2, 5, 0, 9) == pytest.approx(0.5)


def test_response_rejects_bad_stage():
    spec = ResponseSpec.fraction_uniform(0.2, 0.4, 1.0)
    with pytest.raises(ValueError):
        response(spec, 3, 0, 0, 2)
    with pytest.raises(ConfigError):
        ResponseSpec.fraction_uniform(0.5, 0.4, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 12), st.data(), st.floats(0, 3), st.floats(0, 1.5), st.floats(0, 1.5),
       st.floats(0, 0.5), st.booleans())
def test_response_monotone_and_nested(k, data, beta, a, b, sigma, count):
    r1, r2 = min(a, b), max(a, b)
    spec = ResponseSpec(beta, Threshold(r1, sigma), Threshold(r2, sigma), count)
    m1 = data.draw(st.integers(0, k))
    m2 = data.draw(st.integers(0, m1))
    f1 = response(spec, 1, m1, m2, k)
    f2 = response(spec, 2, m1, m2, k)
    assert 0 <= f2 <= f1 <= 1
    if m1 < k:
        assert response(spec, 1, m1 + 1, m2, k) >= f1
        assert response(spec, 2, m1 + 1, m2, k) >= f2
    if m2 < m1:
        assert response(spec, 1, m1, m2 + 1, k) >= f1
        assert response(spec, 2, m1, m2 + 1, k) >= f2


# --- config and seeding -----------------------------------------------------------


def test_sim_config_validation():
    with pytest.raises(ConfigError):
        SimConfig(0.01, 0.02)
    with pytest.raises(ConfigError):
        SimConfig(0.01, t_max=0)


@pytest.mark.parametrize("n,phi1,phi2,c1,c2", [(17420, 0.02, 0.02, 348, 348), (10_000, 1e-3, 0.0, 10, 0),
                                               (50, 1.0, 0.0, 50, 0)])
def test_seed_counts(n, phi1, phi2, c1, c2):
    g = Graph.from_edges(n, [])
    st_ = seed(g, SimConfig(phi1, phi2), np.random.default_rng(0))
    stages = np.array(st_.stages)
    assert int(np.sum(stages >= 1)) == c1
    assert int(np.sum(stages == 2)) == c2


def test_seed_rounding_half_to_even():
    # 0.5 seeds round to 0 and 2.5 to 2
    assert SimConfig(0.05).seed_counts(10) == (0, 0)
    assert SimConfig(0.25).seed_counts(10) == (2, 0)


def test_seed_caches_consistent():
    g = generate_er(4.0, 400, 3)
    s = seed(g, SimConfig(0.1, 0.05), np.random.default_rng(1))
    assert (s.m1, s.m2) == recount(g, s.stages)


# --- node update ------------------------------------------------------------------


def star(leaves):
    return Graph.from_edges(leaves + 1, [(0, i) for i in range(1, leaves + 1)])


def test_update_jumps_to_s2():
    g = star(4)
    spec = ResponseSpec.fraction_uniform(0.2, 0.7, 0.45)
    s = SimState.from_stages(g, [0, 2, 2, 2, 2], [0.2] * 5, [0.7] * 5)
    ch = update_node(s, g, spec, 0)
    assert ch.old is Stage.S0 and ch.new is Stage.S2
    assert (s.m1, s.m2) == recount(g, s.stages)


def test_update_never_downgrades():
    g = star(3)
    spec = ResponseSpec.fraction_uniform(0.2, 0.7, 0.45)
    s = SimState.from_stages(g, [2, 0, 0, 0], [0.2] * 4, [0.7] * 4)
    assert update_node(s, g, spec, 0) is None
    assert s.stages[0] == 2


def test_isolated_node_stays():
    g = Graph.from_edges(3, [(0, 1)])
    spec = ResponseSpec.fraction_uniform(0.0, 0.0, 1.0)
    s = SimState.from_stages(g, [1, 0, 0], [0.0] * 3, [0.0] * 3)
    assert update_node(s, g, spec, 2) is None
    assert update_node(s, g, spec, 1).new is Stage.S2


# --- oracle -----------------------------------------------------------------------


def test_oracle_complete_graph():
    spec = ResponseSpec.fraction_uniform(1 / 3, 2 / 3, 1.0)
    assert final_state_oracle(complete(4), spec, [0], [0]) == [2, 2, 2, 2]


def test_oracle_path_stalls():
    spec = ResponseSpec.fraction_uniform(0.6, 0.9, 0.0)
    assert final_state_oracle(path(3), spec, [0], []) == [1, 0, 0]


def test_oracle_no_seeds():
    spec = ResponseSpec.fraction_uniform(0.1, 0.2, 1.0)
    assert final_state_oracle(complete(5), spec, [], []) == [0] * 5


def test_oracle_requires_thresholds_for_distributed():
    spec = ResponseSpec.distributed(Threshold(0.2, 0.1), Threshold(0.5), 1.0)
    with pytest.raises(ValueError):
        final_state_oracle(path(3), spec, [0], [])


def single_stage_oracle(g, r, seeds):
    active = set(seeds)
    adj = g.adjacency
    while True:
        new = {v for v in range(g.node_count)
               if v not in active and adj[v] and sum(u in active for u in adj[v]) / len(adj[v]) >= r - 1e-12}
        if not new:
            return active
        active |= new


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 40), st.floats(0.3, 5.0), st.floats(0.0, 1.0), st.integers(0, 2**31 - 1))
def test_zero_bonus_reduces_to_single_stage(n, z, r1, s):
    assume_z = min(z, n - 1.5)
    g = generate_er(assume_z, n, s)
    seeds = np.random.default_rng(s).choice(n, size=max(1, n // 10), replace=False).tolist()
    spec = ResponseSpec.fraction_uniform(r1, math.inf, 0.0)
    stages = final_state_oracle(g, spec, seeds, [])
    assert {v for v, x in enumerate(stages) if x >= 1} == single_stage_oracle(g, r1, seeds)
    assert 2 not in stages


# --- runs -------------------------------------------------------------------------


def random_case(draw_rng: random.Random):
    n = draw_rng.randint(2, 50)
    p = draw_rng.uniform(0.02, 0.5)
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if draw_rng.random() < p]
    g = Graph.from_edges(n, edges)
    beta = draw_rng.uniform(0, 2)
    count = draw_rng.random() < 0.3
    scale = 3.0 if count else 1.0
    r1 = [draw_rng.uniform(0, scale) for _ in range(n)]
    r2 = [max(a, draw_rng.uniform(0, 1.5 * scale)) for a in r1]
    spec = ResponseSpec(beta, Threshold(0.0), Threshold(0.0), count)
    seeds1 = draw_rng.sample(range(n), draw_rng.randint(0, max(1, n // 5)))
    seeds2 = seeds1[:draw_rng.randint(0, len(seeds1))]
    return g, spec, (r1, r2), seeds1, seeds2


def async_final(g, spec, thresholds, seeds1, seeds2, order_seed, mode=UpdateMode.ASYNC):
    stages = [0] * g.node_count
    for v in seeds1:
        stages[v] = 1
    for v in seeds2:
        stages[v] = 2
    state = SimState.from_stages(g, stages, *thresholds)
    run_realization(g, spec, state, mode, np.linspace(0, 1, 3), random.Random(order_seed))
    return state


def test_async_matches_oracle_on_random_graphs():
    r = random.Random(2024)
    for _ in range(30):
        g, spec, th, s1, s2 = random_case(r)
        expected = final_state_oracle(g, spec, s1, s2, th)
        for order in range(5):
            st_ = async_final(g, spec, th, s1, s2, order)
            assert st_.stages == expected
            assert (st_.m1, st_.m2) == recount(g, st_.stages)
        assert async_final(g, spec, th, s1, s2, 0, UpdateMode.SYNC).stages == expected


def naive_async(g, spec, stages, thresholds, t_max, t_grid, rng):
    """One uniformly random node per 1/N step, counts recomputed from scratch."""
    n = g.node_count
    adj = g.adjacency
    r1, r2 = thresholds
    stages = list(stages)
    out = []
    gi = 0
    for step in range(1, int(t_max * n) + 1):
        while gi < len(t_grid) and t_grid[gi] * n < step - 1e-9:
            out.append(sum(x >= 1 for x in stages) / n)
            gi += 1
        v = rng.randrange(n)
        k = len(adj[v])
        if k == 0 or stages[v] == 2:
            continue
        m1 = sum(stages[u] >= 1 for u in adj[v])
        m2 = sum(stages[u] == 2 for u in adj[v])
        p = (m1 + spec.beta * m2) / k
        if p >= r2[v] - 1e-12:
            stages[v] = 2
        elif stages[v] == 0 and p >= r1[v] - 1e-12:
            stages[v] = 1
    while gi < len(t_grid):
        out.append(sum(x >= 1 for x in stages) / n)
        gi += 1
    return np.array(out)


def test_geometric_skipping_matches_naive_async():
    g = generate_er(4.0, 200, 5)
    n = g.node_count
    spec = ResponseSpec.fraction_uniform(0.18, 0.5, 1.0)
    th = ([0.18] * n, [0.5] * n)
    t_grid = np.linspace(0, 6, 13)
    base = [0] * n
    for v in range(0, n, 10):
        base[v] = 1
    reps = 300
    fast = np.zeros((reps, len(t_grid)))
    slow = np.zeros((reps, len(t_grid)))
    for i in range(reps):
        state = SimState.from_stages(g, base, *th)
        counts, _, _ = run_realization(g, spec, state, UpdateMode.ASYNC, t_grid, random.Random(i))
        fast[i] = counts[:, 0, :].sum(axis=1) / n
        slow[i] = naive_async(g, spec, base, th, 6.0, t_grid, random.Random(10_000 + i))
    se = np.sqrt(fast.var(axis=0) / reps + slow.var(axis=0) / reps) + 1e-9
    assert np.all(np.abs(fast.mean(axis=0) - slow.mean(axis=0)) < 4 * se + 1e-3)
    # the process is genuinely transient on this grid
    assert fast.mean(axis=0)[1] < fast.mean(axis=0)[-1] - 0.2


def test_run_series_invariants_and_determinism():
    g = generate_er(5.0, 1000, 2)
    spec = ResponseSpec.distributed(Threshold(0.2, 0.05), Threshold(0.5, 0.1), 0.8)
    cfg = SimConfig(0.02, 0.01, t_max=20, realizations=3, rng_seed=9, n_grid=50)
    a = run(g, spec, cfg)
    b = run(g, spec, cfg)
    np.testing.assert_array_equal(a.rho1_k, b.rho1_k)
    for ts in (a.rho1, a.rho2):
        assert np.all(np.diff(ts) >= -1e-15)
    assert np.all(a.rho2 <= a.rho1 + 1e-15)
    assert np.all((a.rho1 >= 0) & (a.rho1 <= 1))
    assert a.final_rho1 >= a.rho1[-1] - 1e-15


def test_run_parallel_matches_serial():
    g = generate_er(4.0, 300, 1)
    spec = ResponseSpec.fraction_uniform(0.2, 0.6, 1.0)
    cfg = SimConfig(0.02, realizations=4, rng_seed=3, t_max=10, n_grid=20)
    np.testing.assert_array_equal(run(g, spec, cfg).rho1_k, run(g, spec, cfg, workers=2).rho1_k)


def test_fixed_seeds_flag():
    g = generate_er(3.0, 500, 1)
    spec = ResponseSpec.fraction_uniform(0.9, 0.95, 0.0)
    # nothing spreads, so the final density is exactly the seed density either way
    for fixed in (True, False):
        cfg = SimConfig(0.1, realizations=3, rng_seed=4, fixed_seeds=fixed, t_max=1, n_grid=5)
        assert run(g, spec, cfg).final_rho1 >= 0.1 - 1e-12


def test_zero_seeds_give_zero_series():
    g = generate_er(4.0, 300, 1)
    ts = run(g, ResponseSpec.fraction_uniform(0.1, 0.3, 1.0), SimConfig(0.0, t_max=5, n_grid=10))
    assert np.all(ts.rho1_k == 0) and np.all(ts.rho2_k == 0)


def test_count_based_four_five_step():
    g = four_five_graph()
    spec = ResponseSpec.count_uniform(1, 5, 0.2)
    ts = run(g, spec, SimConfig(1e-3, t_max=30, realizations=2, rng_seed=1, n_grid=20))
    assert ts.final_rho2 == pytest.approx(2 / 3, abs=0.02)
    assert ts.final_rho2_k[ts.class_index(4)] < 0.01
