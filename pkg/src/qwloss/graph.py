"""Graph representation, signed incidence operators and simple graph statistics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

logger = logging.getLogger(__name__)


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Edge-list graph with positive weights.

    Edge ``e`` runs from ``heads[e]`` to ``tails[e]``.  Undirected graphs store
    each edge once with ``head < tail``.
    """

    num_nodes: int
    heads: np.ndarray
    tails: np.ndarray
    weights: np.ndarray
    directed: bool = False
    dropped_self_loops: int = 0
    dropped_duplicates: int = 0
    _adjacency: list = field(default=None, repr=False)

    @property
    def num_edges(self) -> int:
        return int(self.heads.shape[0])

    @property
    def edges(self) -> list[tuple[int, int]]:
        return list(zip(self.heads.tolist(), self.tails.tolist()))

    @property
    def adjacency(self) -> list[list[int]]:
        """Neighbor lists; for directed graphs only out-neighbors (head -> tail)."""
        return self._adjacency

    def adjacency_matrix(self) -> sp.csr_matrix:
        n = self.num_nodes
        a = sp.coo_matrix((self.weights, (self.heads, self.tails)), shape=(n, n))
        if not self.directed:
            a = a + a.T
        return a.tocsr()

    def full_mask(self) -> "NodeMask":
        return NodeMask(np.arange(self.num_nodes), self.num_nodes)


def build_graph(num_nodes, edge_pairs, weights=None, directed=False) -> Graph:
    num_nodes = int(num_nodes)
    if num_nodes < 0:
        raise GraphError("num_nodes must be nonnegative")
    pairs = np.asarray(edge_pairs, dtype=np.int64).reshape(-1, 2)
    if weights is None:
        w = np.ones(len(pairs))
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != pairs.shape[0]:
            raise GraphError(f"got {w.shape[0]} weights for {pairs.shape[0]} edges")
        bad = np.flatnonzero(~(w > 0) | ~np.isfinite(w))
        if bad.size:
            raise GraphError(f"non-positive weight {w[bad[0]]!r} on edge {bad[0]}")
    if pairs.size and (pairs.min() < 0 or pairs.max() >= num_nodes):
        k = int(np.flatnonzero((pairs < 0).any(1) | (pairs >= num_nodes).any(1))[0])
        raise GraphError(f"edge {k} {tuple(pairs[k])} has node id out of range [0, {num_nodes})")

    heads, tails = pairs[:, 0].copy(), pairs[:, 1].copy()
    if not directed:
        heads, tails = np.minimum(heads, tails), np.maximum(heads, tails)

    loops = heads == tails
    n_loops = int(loops.sum())
    heads, tails, w = heads[~loops], tails[~loops], w[~loops]

    # first occurrence wins
    keys = heads * max(num_nodes, 1) + tails
    _, first = np.unique(keys, return_index=True)
    first.sort()
    n_dups = int(heads.shape[0] - first.shape[0])
    heads, tails, w = heads[first], tails[first], w[first]

    if n_loops or n_dups:
        logger.warning("build_graph dropped %d self-loops and %d duplicate edges", n_loops, n_dups)

    adj = [[] for _ in range(num_nodes)]
    for h, t in zip(heads.tolist(), tails.tolist()):
        adj[h].append(t)
        if not directed:
            adj[t].append(h)

    for arr in (heads, tails, w):
        arr.setflags(write=False)
    return Graph(num_nodes, heads, tails, w, bool(directed), n_loops, n_dups, adj)


class NodeMask:
    """Sorted, duplicate-free subset of node ids."""

    def __init__(self, members, num_nodes: int):
        m = np.unique(np.asarray(members, dtype=np.int64).reshape(-1))
        if m.size and (m[0] < 0 or m[-1] >= num_nodes):
            raise GraphError(f"mask contains ids outside [0, {num_nodes})")
        m.setflags(write=False)
        self.members = m
        self.num_nodes = int(num_nodes)

    def __len__(self):
        return int(self.members.shape[0])

    def __iter__(self):
        return iter(self.members.tolist())

    def __eq__(self, other):
        return (
            isinstance(other, NodeMask)
            and self.num_nodes == other.num_nodes
            and np.array_equal(self.members, other.members)
        )

    def __repr__(self):
        return f"NodeMask({self.members.tolist()}, num_nodes={self.num_nodes})"

    def complement(self) -> "NodeMask":
        keep = np.ones(self.num_nodes, dtype=bool)
        keep[self.members] = False
        return NodeMask(np.flatnonzero(keep), self.num_nodes)

    def as_bool(self) -> np.ndarray:
        out = np.zeros(self.num_nodes, dtype=bool)
        out[self.members] = True
        return out

    def is_full(self) -> bool:
        return len(self) == self.num_nodes


def as_mask(mask, num_nodes: int) -> NodeMask:
    if isinstance(mask, NodeMask):
        if mask.num_nodes != num_nodes:
            raise GraphError("mask built for a different graph size")
        return mask
    if mask is None:
        return NodeMask(np.arange(num_nodes), num_nodes)
    arr = np.asarray(mask)
    if arr.dtype == bool:
        if arr.shape != (num_nodes,):
            raise GraphError("boolean mask has the wrong length")
        arr = np.flatnonzero(arr)
    return NodeMask(arr, num_nodes)


class IncidenceOperator:
    """Signed node-by-edge operator: +1 at the head row, -1 at the tail row.

    Only rows in ``rows`` are kept, in mask order.
    """

    def __init__(self, graph: Graph, rows: NodeMask):
        self.graph = graph
        self.rows = rows
        n, m = graph.num_nodes, graph.num_edges
        cols = np.arange(m)
        full = sp.csr_matrix(
            (
                np.concatenate([np.ones(m), -np.ones(m)]),
                (np.concatenate([graph.heads, graph.tails]), np.concatenate([cols, cols])),
            ),
            shape=(n, m),
        )
        self.matrix = full[rows.members].tocsr() if not rows.is_full() else full
        self.matrix.sort_indices()
        self._adjoint = self.matrix.T.tocsr()

    @property
    def shape(self):
        return self.matrix.shape

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def apply(self, M: np.ndarray) -> np.ndarray:
        M = np.asarray(M, dtype=np.float64)
        if M.shape[0] != self.shape[1]:
            raise GraphError(f"expected {self.shape[1]} edge rows, got {M.shape[0]}")
        return self.matrix @ M

    def apply_adjoint(self, M: np.ndarray) -> np.ndarray:
        M = np.asarray(M, dtype=np.float64)
        if M.shape[0] != self.shape[0]:
            raise GraphError(f"expected {self.shape[0]} node rows, got {M.shape[0]}")
        return self._adjoint @ M


def incidence(graph: Graph, mask=None) -> IncidenceOperator:
    return IncidenceOperator(graph, as_mask(mask, graph.num_nodes))


def incidence_matvec(op: IncidenceOperator, M, adjoint: bool = False) -> np.ndarray:
    return op.apply_adjoint(M) if adjoint else op.apply(M)


def homophily_rate(graph: Graph, labels) -> float:
    """Fraction of edges whose two endpoints carry the same class."""
    labels = np.asarray(labels)
    if labels.shape[0] != graph.num_nodes:
        raise GraphError(f"expected {graph.num_nodes} labels, got {labels.shape[0]}")
    if labels.dtype.kind == "f" and np.isnan(labels).any():
        raise GraphError("missing label")
    if labels.dtype == object and any(x is None for x in labels):
        raise GraphError("missing label")
    if graph.num_edges == 0:
        return 0.0
    return float(np.mean(labels[graph.heads] == labels[graph.tails]))


def shortest_path_costs(graph: Graph, sources=None) -> np.ndarray:
    """Weighted shortest-path distances from each source; ``inf`` when unreachable."""
    src = as_mask(sources, graph.num_nodes)
    n = graph.num_nodes
    if n == 0:
        return np.zeros((0, 0))
    a = sp.csr_matrix((graph.weights, (graph.heads, graph.tails)), shape=(n, n))
    return dijkstra(a, directed=graph.directed, indices=src.members)
