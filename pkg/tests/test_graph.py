from __future__ import annotations

import io
import math
import warnings

import networkx as nx
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from cascadelab import (DegreeDistribution, EdgeListError, EdgeListWarning, Graph, GraphConstructionError,
                        JointDegreeDistribution, UndefinedDistributionError, assortativity,
                        degree_distribution, generate_config_model, generate_correlated, generate_er,
                        joint_degree_distribution, load_edge_list, save_edge_list)
from conftest import FOUR_24, FOUR_FIVE, four_24_graph, four_five_graph


def check_simple(g: Graph):
    adj = g.adjacency
    for u, nbrs in enumerate(adj):
        assert u not in nbrs
        assert len(set(nbrs)) == len(nbrs)
        assert nbrs == sorted(nbrs)
        for v in nbrs:
            assert u in adj[v]
    assert int(g.degrees.sum()) == 2 * g.edge_count
    idx = g.degree_index
    members = np.sort(np.concatenate(list(idx.values())))
    assert np.array_equal(members, np.arange(g.node_count))
    for k, nodes in idx.items():
        assert np.all(g.degrees[nodes] == k)


# --- distributions ---------------------------------------------------------------


def test_degree_distribution_validation():
    with pytest.raises(ValueError):
        DegreeDistribution({1: 0.5, 2: 0.6})
    with pytest.raises(ValueError):
        DegreeDistribution({1: -0.1, 2: 1.1})
    d = DegreeDistribution.from_weights({2: 1, 6: 3})
    assert d.mean == pytest.approx(0.25 * 2 + 0.75 * 6)


def test_poisson_truncation_mass():
    d = DegreeDistribution.poisson(4.0)
    assert d.kmax >= 30
    assert d.pk.sum() == pytest.approx(1.0, abs=1e-12)
    assert d.mean == pytest.approx(4.0, abs=1e-9)


def test_joint_marginal_matches_edge_weights():
    j = JointDegreeDistribution.factorized(FOUR_FIVE)
    rows = j.matrix.sum(axis=1)
    z = FOUR_FIVE.mean
    np.testing.assert_allclose(rows, j.degrees * FOUR_FIVE.pk / z, atol=1e-10)
    assert j.marginal()[4] == pytest.approx(1 / 3, abs=1e-12)


def test_joint_rejects_asymmetry():
    with pytest.raises(ValueError):
        JointDegreeDistribution(np.array([1, 2]), np.array([[0.5, 0.3], [0.1, 0.1]]))


# --- configuration model ---------------------------------------------------------


def test_four_five_exact_class_sizes():
    g = four_five_graph()
    check_simple(g)
    ks, counts = np.unique(g.degrees, return_counts=True)
    assert ks.tolist() == [4, 5]
    assert counts.tolist() == [3333, 6666]
    d = degree_distribution(g)
    assert d[4] == 3333 / 9999 and d[5] == 6666 / 9999


def test_degree_one_perfect_matching():
    g = generate_config_model(DegreeDistribution({1: 1.0}), 4, 0)
    assert g.edge_count == 2
    assert np.all(g.degrees == 1)


def test_regular_graph_assortativity_near_zero():
    g = generate_config_model(DegreeDistribution({3: 1.0}), 50, 7)
    check_simple(g)
    assert np.all(g.degrees == 3)
    # all endpoint degrees are equal, so the correlation is degenerate
    assert assortativity(g) is None


def test_config_model_kmax_too_large():
    with pytest.raises(GraphConstructionError):
        generate_config_model(DegreeDistribution({5: 1.0}), 4, 0)


def test_config_model_odd_sum_without_repair():
    with pytest.raises(GraphConstructionError, match="opposite parity"):
        generate_config_model(DegreeDistribution({1: 0.5, 3: 0.5}), 31, 0)


def test_config_model_deterministic():
    a = generate_config_model(FOUR_FIVE, 300, 5)
    b = generate_config_model(FOUR_FIVE, 300, 5)
    assert np.array_equal(a.edges(), b.edges())


def test_uncorrelated_assortativity_matches_networkx():
    dist = DegreeDistribution({2: 0.5, 8: 0.5})
    g = generate_config_model(dist, 10_000, 2)
    check_simple(g)
    ref = nx.Graph()
    ref.add_nodes_from(range(g.node_count))
    ref.add_edges_from(g.edges().tolist())
    r = assortativity(g)
    assert r == pytest.approx(nx.degree_assortativity_coefficient(ref), abs=1e-10)
    assert abs(r) < 0.15


# --- Erdos-Renyi -----------------------------------------------------------------


def test_er_mean_degree():
    g = generate_er(5.0, 10_000, 0)
    check_simple(g)
    assert 4.9 <= g.degrees.mean() <= 5.1


def test_er_tiny_z_is_edgeless():
    g = generate_er(1e-9, 100, 0)
    assert g.edge_count == 0


def test_er_poisson_total_variation():
    g = generate_er(4.0, 10_000, 1)
    ks, counts = np.unique(g.degrees, return_counts=True)
    emp = dict(zip(ks.tolist(), (counts / g.node_count).tolist()))
    kmax = max(40, int(ks.max()))
    # Poisson pmf from the recurrence p_k = p_{k-1} z / k, independent of the library
    p = math.exp(-4.0)
    tv = 0.0
    for k in range(kmax + 1):
        if k > 0:
            p *= 4.0 / k
        tv += abs(emp.get(k, 0.0) - p)
    assert tv / 2 < 0.02


@pytest.mark.parametrize("z,n", [(0.0, 10), (9.0, 10)])
def test_er_preconditions(z, n):
    with pytest.raises(GraphConstructionError):
        generate_er(z, n, 0)


# --- correlated ------------------------------------------------------------------


def test_correlated_four_24():
    g = four_24_graph()
    check_simple(g)
    ks, counts = np.unique(g.degrees, return_counts=True)
    assert ks.tolist() == [4, 24]
    assert counts[0] == counts[1]
    assert assortativity(g) > 0
    j = joint_degree_distribution(g)
    assert j[4, 4] / j[4, 24] == pytest.approx(3.0, rel=0.10)
    np.testing.assert_allclose(j.matrix, FOUR_24.matrix, atol=0.01)


def test_correlated_factorized_is_uncorrelated():
    g = generate_correlated(JointDegreeDistribution.factorized(FOUR_FIVE), 10_000, 4)
    check_simple(g)
    assert abs(assortativity(g)) < 0.15
    g2 = generate_config_model(FOUR_FIVE, 10_000, 4)
    assert abs(assortativity(g2)) < 0.15


def test_correlated_joint_recovered_over_seeds():
    mats = [joint_degree_distribution(generate_correlated(FOUR_24, 10_000, s)).matrix for s in range(10)]
    np.testing.assert_allclose(np.mean(mats, axis=0), FOUR_24.matrix, atol=0.01)


# --- edge lists ------------------------------------------------------------------


def test_load_path():
    g = load_edge_list(b"0 1\n1 2")
    assert g.degrees.tolist() == [1, 2, 1]


def test_load_drops_duplicates_and_loops():
    with pytest.warns(EdgeListWarning, match="1 self-loops and 1 duplicate"):
        g = load_edge_list(b"0 1\n1 0\n2 2")
    assert g.node_count == 3
    assert g.edge_count == 1
    assert g.degrees.tolist() == [1, 1, 0]


def test_load_comments_and_errors():
    g = load_edge_list(b"# header\n0 1  # trailing\n\n")
    assert g.edge_count == 1
    with pytest.raises(EdgeListError, match="line 2"):
        load_edge_list(b"0 1\n1 x\n")


def test_edge_list_remap_round_trip():
    g = load_edge_list(b"10 30\n30 20\n")
    assert g.labels.tolist() == [10, 20, 30]
    buf = io.BytesIO()
    save_edge_list(g, buf)
    assert buf.getvalue() == b"10 30\n20 30\n"


def test_large_edge_list_marginal_round_trip():
    g = generate_er(2.0, 10_000, 9)
    buf = io.BytesIO()
    save_edge_list(g, buf)
    h = load_edge_list(buf.getvalue())
    d = degree_distribution(h)
    d = DegreeDistribution({k: p for k, p in d.probabilities.items() if k > 0})
    m = joint_degree_distribution(h).marginal()
    for k in m.probabilities:
        assert m[k] == pytest.approx(d[k], abs=1e-10)


# --- statistics ------------------------------------------------------------------


def test_joint_small_cases():
    edge = Graph.from_edges(2, [(0, 1)])
    assert joint_degree_distribution(edge)[1, 1] == 1.0
    star3 = Graph.from_edges(4, [(0, 1), (0, 2), (0, 3)])
    j = joint_degree_distribution(star3)
    assert j[1, 3] == pytest.approx(0.5) and j[3, 1] == pytest.approx(0.5)
    with pytest.raises(UndefinedDistributionError):
        joint_degree_distribution(Graph.from_edges(3, []))


def test_star_assortativity_is_minus_one():
    star = Graph.from_edges(6, [(0, i) for i in range(1, 6)])
    # ordered pairs: five (5, 1) and five (1, 5); they are perfectly anticorrelated
    a = [5] * 5 + [1] * 5
    b = [1] * 5 + [5] * 5
    expected = float(np.corrcoef(a, b)[0, 1])
    assert expected == pytest.approx(-1.0)
    assert assortativity(star) == pytest.approx(-1.0)


def test_two_disjoint_edges_distribution():
    g = Graph.from_edges(4, [(0, 1), (2, 3)])
    assert degree_distribution(g).probabilities == {1: 1.0}


# --- properties ------------------------------------------------------------------

edge_lists = st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30)), max_size=120)


@settings(max_examples=60, deadline=None)
@given(edge_lists)
def test_edge_list_canonical_idempotence(pairs):
    text = "".join(f"{u} {v}\n" for u, v in pairs).encode() or b"0\n"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EdgeListWarning)
        g = load_edge_list(text)
    check_simple(g)
    first = io.BytesIO()
    save_edge_list(g, first)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EdgeListWarning)
        h = load_edge_list(first.getvalue() or b"0\n")
    second = io.BytesIO()
    save_edge_list(h, second)
    assert first.getvalue() == second.getvalue()


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.integers(1, 8), st.floats(0.05, 1.0), min_size=1, max_size=4),
       st.integers(30, 300), st.integers(0, 2**31 - 1))
def test_config_model_handshake(weights, n, seed):
    dist = DegreeDistribution.from_weights(weights)
    assume(dist.kmax < n)
    # only odd degrees on an odd node count cannot have an even degree sum
    assume(n % 2 == 0 or any(k % 2 == 0 for k in weights))
    g = generate_config_model(dist, n, seed)
    check_simple(g)
    d = degree_distribution(g)
    assert sum(k * p for k, p in d.probabilities.items()) * n == pytest.approx(2 * g.edge_count)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 6.0), st.integers(20, 400), st.integers(0, 2**31 - 1))
def test_er_is_simple(z, n, seed):
    assume(z < n - 1)
    check_simple(generate_er(z, n, seed))
