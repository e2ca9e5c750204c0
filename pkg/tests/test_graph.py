import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qwloss.graph import (
    GraphError,
    NodeMask,
    as_mask,
    build_graph,
    homophily_rate,
    incidence,
    incidence_matvec,
    shortest_path_costs,
)


def random_graph(rng, n, p=0.4, directed=False):
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j and (directed or i < j) and rng.random() < p]
    return build_graph(n, pairs, rng.uniform(0.5, 2.0, len(pairs)), directed=directed)


def naive_incidence(g):
    S = np.zeros((g.num_nodes, g.num_edges))
    for e, (h, t) in enumerate(g.edges):
        S[h, e] += 1
        S[t, e] -= 1
    return S


# -- construction ------------------------------------------------------------

def test_single_edge_canonical():
    g = build_graph(2, [(1, 0)])
    assert g.num_edges == 1
    assert g.edges == [(0, 1)]
    assert g.weights.tolist() == [1.0]


def test_dedup_and_orientation(caplog):
    with caplog.at_level(logging.WARNING):
        g = build_graph(3, [(1, 0), (1, 2), (2, 1)])
    assert g.edges == [(0, 1), (1, 2)]
    assert g.dropped_duplicates == 1
    assert "duplicate" in caplog.text


def test_first_duplicate_weight_wins():
    g = build_graph(3, [(0, 1), (1, 0)], [2.0, 5.0])
    assert g.weights.tolist() == [2.0]


def test_self_loops_dropped():
    g = build_graph(3, [(0, 0), (0, 1), (2, 2)])
    assert g.edges == [(0, 1)]
    assert g.dropped_self_loops == 2


def test_directed_keeps_orientation():
    g = build_graph(3, [(2, 0), (0, 2)], directed=True)
    assert g.edges == [(2, 0), (0, 2)]


@pytest.mark.parametrize("pairs, weights", [([(0, 3)], None), ([(-1, 0)], None), ([(0, 1)], [0.0]), ([(0, 1)], [-2.0]),
                                            ([(0, 1)], [np.nan])])
def test_build_errors(pairs, weights):
    with pytest.raises(GraphError):
        build_graph(3, pairs, weights)


def test_weight_length_mismatch():
    with pytest.raises(GraphError):
        build_graph(3, [(0, 1), (1, 2)], [1.0])


def test_adjacency_lists():
    g = build_graph(3, [(0, 1), (1, 2)])
    assert g.adjacency == [[1], [0, 2], [1]]
    d = build_graph(3, [(0, 1), (2, 1)], directed=True)
    assert d.adjacency == [[1], [], [1]]


# -- masks --------------------------------------------------------------------

def test_nodemask_sorted_unique():
    m = NodeMask([3, 1, 3, 0], 5)
    assert m.members.tolist() == [0, 1, 3]
    assert m.complement().members.tolist() == [2, 4]
    assert m.as_bool().tolist() == [True, True, False, True, False]
    with pytest.raises(GraphError):
        NodeMask([5], 5)


def test_as_mask_variants():
    assert as_mask(None, 3).is_full()
    assert as_mask(np.array([True, False, True]), 3).members.tolist() == [0, 2]
    with pytest.raises(GraphError):
        as_mask(NodeMask([0], 4), 3)


# -- incidence ----------------------------------------------------------------

def test_incidence_single_edge():
    g = build_graph(2, [(0, 1)])
    assert incidence(g).dense().tolist() == [[1.0], [-1.0]]


def test_incidence_row_restriction():
    g = build_graph(3, [(0, 1), (1, 2)])
    assert incidence(g, [0, 2]).dense().tolist() == [[1.0, 0.0], [0.0, -1.0]]


def test_matvec_examples():
    g = build_graph(2, [(0, 1)])
    op = incidence(g)
    assert incidence_matvec(op, np.array([[1.0]])).tolist() == [[1.0], [-1.0]]
    assert incidence_matvec(op, np.array([[1.0], [-1.0]]), adjoint=True).tolist() == [[2.0]]


def test_matvec_shape_error():
    op = incidence(build_graph(3, [(0, 1), (1, 2)]))
    with pytest.raises(GraphError):
        op.apply(np.ones((3, 1)))
    with pytest.raises(GraphError):
        op.apply_adjoint(np.ones((2, 1)))


def test_matvec_matches_dense_n7():
    rng = np.random.default_rng(0)
    g = random_graph(rng, 7, 0.5)
    S = naive_incidence(g)
    F = rng.standard_normal((g.num_edges, 3))
    mask = [0, 2, 3, 6]
    op = incidence(g, mask)
    assert np.abs(op.apply(F) - S[mask] @ F).max() < 1e-12
    R = rng.standard_normal((len(mask), 3))
    assert np.abs(op.apply_adjoint(R) - S[mask].T @ R).max() < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 12), st.integers(0, 10_000))
def test_full_incidence_columns_sum_to_zero(n, seed):
    g = random_graph(np.random.default_rng(seed), n, 0.5)
    S = incidence(g).dense()
    assert np.array_equal(S, naive_incidence(g))
    assert np.all(S.sum(axis=0) == 0)
    assert np.all((S != 0).sum(axis=0) == 2)
    F = np.random.default_rng(seed).standard_normal((g.num_edges, 2))
    assert np.abs((S @ F).sum(axis=0)).max() < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.integers(0, 10_000))
def test_masked_columns_at_most_two(n, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n)
    mask = np.flatnonzero(rng.random(n) < 0.5)
    S = incidence(g, mask).dense()
    assert np.all((S == 1).sum(axis=0) <= 1) and np.all((S == -1).sum(axis=0) <= 1)


# -- statistics ---------------------------------------------------------------

def test_homophily_examples():
    tri = build_graph(3, [(0, 1), (1, 2), (0, 2)])
    assert homophily_rate(tri, ["a", "a", "a"]) == 1.0
    assert homophily_rate(build_graph(2, [(0, 1)]), ["a", "b"]) == 0.0
    with pytest.raises(GraphError):
        homophily_rate(tri, [0, 1])
    with pytest.raises(GraphError):
        homophily_rate(tri, [0.0, np.nan, 1.0])


def test_homophily_permutation_invariant():
    rng = np.random.default_rng(3)
    g = random_graph(rng, 9)
    labels = rng.integers(0, 3, 9)
    perm = rng.permutation(9)
    inv = np.argsort(perm)
    h = build_graph(9, [(inv[u], inv[v]) for u, v in g.edges])
    assert homophily_rate(g, labels) == pytest.approx(homophily_rate(h, labels[perm]))


def test_shortest_path_examples():
    path = build_graph(3, [(0, 1), (1, 2)])
    assert shortest_path_costs(path, [0])[0].tolist() == [0.0, 1.0, 2.0]
    tri = build_graph(3, [(0, 1), (1, 2), (0, 2)])
    D = shortest_path_costs(tri)
    assert np.array_equal(D, 1.0 - np.eye(3))


def test_shortest_path_unreachable_and_directed():
    g = build_graph(3, [(0, 1)])
    assert np.isinf(shortest_path_costs(g, [0])[0, 2])
    d = build_graph(2, [(0, 1)], directed=True)
    D = shortest_path_costs(d)
    assert D[0, 1] == 1.0 and np.isinf(D[1, 0])


def test_shortest_path_triangle_inequality_n8():
    rng = np.random.default_rng(5)
    g = random_graph(rng, 8, 0.6)
    D = shortest_path_costs(g)
    assert np.allclose(D, D.T)
    lhs = D[:, None, :]
    rhs = D[:, :, None] + D[None, :, :]
    assert np.all(lhs <= rhs + 1e-12)
