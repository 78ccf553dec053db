import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from netisac.errors import ConfigError
from netisac.topology import (NetworkGraph, build_random_network, metropolis_weights,
                              validate_combination)


def path_graph(n):
    adj = np.eye(n, dtype=bool)
    for k in range(n - 1):
        adj[k, k + 1] = adj[k + 1, k] = True
    return NetworkGraph(adj)


def test_two_users_only_connected_option_is_a_path():
    g = build_random_network(2, 1, seed=3)
    assert g.adjacency.all()
    assert g.degree.tolist() == [1, 1]


def test_twenty_users_mean_degree_near_three():
    g = build_random_network(20, 3, seed=11)
    assert g.is_connected()
    assert 2 <= g.degree.mean() <= 4


def test_same_seed_same_graph():
    a = build_random_network(5, 2, seed=42)
    b = build_random_network(5, 2, seed=42)
    assert np.array_equal(a.adjacency, b.adjacency)


@pytest.mark.parametrize("n, deg", [(1, 1), (5, 0.5), (5, 5), (4, 7)])
def test_infeasible_requests_rejected(n, deg):
    with pytest.raises(ConfigError):
        build_random_network(n, deg, seed=0)


def test_metropolis_two_node_path():
    C = metropolis_weights(path_graph(2))
    assert np.array_equal(C, [[0.0, 1.0], [1.0, 0.0]])


def test_metropolis_three_node_path():
    C = metropolis_weights(path_graph(3))
    np.testing.assert_allclose(C[:, 0], [0.5, 0.5, 0.0], atol=1e-15)
    np.testing.assert_allclose(C[:, 1], [0.5, 0.0, 0.5], atol=1e-15)


def test_metropolis_triangle():
    C = metropolis_weights(NetworkGraph(np.ones((3, 3), dtype=bool)))
    np.testing.assert_allclose(C, 0.5 * (np.ones((3, 3)) - np.eye(3)), atol=1e-15)


def test_metropolis_against_hand_loop():
    g = build_random_network(9, 3, seed=5)
    deg = g.degree
    ref = np.zeros((9, 9))
    for k in range(9):
        for l in g.neighbors(k, include_self=False):
            ref[l, k] = 1.0 / max(deg[k], deg[l])
        ref[k, k] = 1.0 - ref[:, k].sum()
    np.testing.assert_allclose(metropolis_weights(g), ref, atol=1e-15)


def test_validation_passes_metropolis_and_identity():
    g = build_random_network(6, 2, seed=1)
    assert validate_combination(metropolis_weights(g), g).passed
    assert validate_combination(np.eye(6), g).passed


def test_validation_locates_negative_entry():
    g = path_graph(3)
    C = metropolis_weights(g)
    C[0, 0], C[1, 0] = 1.2, -0.2
    rep = validate_combination(C, g)
    assert not rep.passed
    assert rep.negative_entries[0][:2] == (1, 0)
    assert "negative_entries" in rep.summary()


def test_validation_flags_support_violation():
    g = path_graph(3)
    C = np.eye(3)
    C[2, 0], C[0, 0] = 0.5, 0.5
    rep = validate_combination(C, g)
    assert not rep.passed and rep.support_violations[0][:2] == (2, 0)


def test_validation_shape_mismatch():
    with pytest.raises(ConfigError):
        validate_combination(np.eye(4), path_graph(3))


def test_asymmetric_adjacency_rejected():
    adj = np.eye(3, dtype=bool)
    adj[0, 1] = True
    with pytest.raises(ConfigError):
        NetworkGraph(adj)


def test_json_round_trip():
    g = build_random_network(7, 3, seed=9)
    text = g.to_json()
    assert json.loads(text)["n_users"] == 7
    assert np.array_equal(NetworkGraph.from_json(text).adjacency, g.adjacency)


@given(n=st.integers(3, 20), seed=st.integers(0, 2**31 - 1), deg_frac=st.floats(0.2, 0.8))
def test_metropolis_contract_on_random_graphs(n, seed, deg_frac):
    deg = max(1.0, deg_frac * (n - 1))
    g = build_random_network(n, deg, seed)
    C = metropolis_weights(g)
    assert g.is_connected()
    np.testing.assert_allclose(C.sum(axis=0), 1.0, atol=1e-12)
    assert np.all(C[~g.adjacency] == 0)
    off = C - np.diag(np.diag(C))
    np.testing.assert_array_equal(off, off.T)
    assert C.min() >= 0 and C.max() <= 1


@given(seed=st.integers(0, 10**6), n=st.integers(1, 15), p=st.floats(0.0, 0.6))
def test_connectivity_agrees_with_scipy(seed, n, p):
    from scipy.sparse.csgraph import connected_components
    rng = np.random.default_rng(seed)
    adj = np.triu(rng.random((n, n)) < p, 1)
    adj |= adj.T
    assert NetworkGraph(adj).is_connected() == (connected_components(adj, directed=False)[0] == 1)
