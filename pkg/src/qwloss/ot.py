"""Exact Wasserstein and partial Wasserstein distances on graphs.

The flow problems are solved combinatorially by successive shortest paths
with node potentials.  ``classic_w1_oracle`` solves the same distance as a
transport linear program over shortest-path costs and exists to cross-check
the flow solver on small instances.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .graph import Graph, NodeMask, as_mask, incidence, shortest_path_costs


class InfeasibleFlowError(ValueError):
    """The supplies cannot be routed: imbalance or unreachable demand."""


class MonotonicityViolation(AssertionError):
    pass


@dataclass
class FlowResult:
    cost: float
    flow: np.ndarray
    residual: float


@dataclass
class ClassicOTResult:
    cost: float
    plan: np.ndarray
    sources: np.ndarray
    targets: np.ndarray


class _ArcNetwork:
    """Uncapacitated arcs with a residual reverse copy of each arc."""

    def __init__(self, num_nodes):
        self.n = num_nodes
        self.tail = []  # arc start
        self.head = []  # arc end
        self.cost = []
        self.edge = []  # graph edge id, -1 for virtual arcs
        self.sign = []  # contribution to the signed edge flow
        self.out = [[] for _ in range(num_nodes)]

    def add(self, u, v, c, edge, sign):
        a = len(self.tail)
        self.tail.append(u)
        self.head.append(v)
        self.cost.append(c)
        self.edge.append(edge)
        self.sign.append(sign)
        self.out[u].append(a)
        return a


def _build_network(graph: Graph, mask: NodeMask):
    n = graph.num_nodes
    net = _ArcNetwork(n + 1)
    virtual = n
    for e, (h, t, w) in enumerate(zip(graph.heads.tolist(), graph.tails.tolist(), graph.weights.tolist())):
        net.add(h, t, w, e, 1.0)
        if not graph.directed:
            net.add(t, h, w, e, -1.0)
    free = np.ones(n, dtype=bool)
    free[mask.members] = False
    for v in np.flatnonzero(free).tolist():
        net.add(v, virtual, 0.0, -1, 0.0)
        net.add(virtual, v, 0.0, -1, 0.0)
    return net


def _successive_shortest_paths(net: _ArcNetwork, supply: np.ndarray, tol: float) -> np.ndarray:
    n = net.n
    m = len(net.tail)
    cost = np.asarray(net.cost, dtype=np.float64)
    x = np.zeros(m)
    pi = np.zeros(n)
    excess = supply.astype(np.float64).copy()
    # incoming arcs give residual reverse moves
    into = [[] for _ in range(n)]
    for a in range(m):
        into[net.head[a]].append(a)

    while True:
        sources = np.flatnonzero(excess > tol)
        sinks = excess < -tol
        if sources.size == 0 or not sinks.any():
            break
        dist = np.full(n, np.inf)
        # pred = (arc, +1 forward | -1 reverse)
        pred_arc = np.full(n, -1, dtype=np.int64)
        pred_dir = np.zeros(n, dtype=np.int8)
        heap = []
        for s in sources.tolist():
            dist[s] = 0.0
            heap.append((0.0, s))
        heapq.heapify(heap)
        done = np.zeros(n, dtype=bool)
        target = -1
        while heap:
            d, u = heapq.heappop(heap)
            if done[u]:
                continue
            done[u] = True
            if sinks[u]:
                target = u
                break
            for a in net.out[u]:
                v = net.head[a]
                if done[v]:
                    continue
                nd = d + max(cost[a] + pi[u] - pi[v], 0.0)
                if nd < dist[v]:
                    dist[v] = nd
                    pred_arc[v] = a
                    pred_dir[v] = 1
                    heapq.heappush(heap, (nd, v))
            for a in into[u]:
                if x[a] <= 0.0:
                    continue
                v = net.tail[a]
                if done[v]:
                    continue
                nd = d + max(-cost[a] + pi[u] - pi[v], 0.0)
                if nd < dist[v]:
                    dist[v] = nd
                    pred_arc[v] = a
                    pred_dir[v] = -1
                    heapq.heappush(heap, (nd, v))
        if target < 0:
            raise InfeasibleFlowError("remaining demand is unreachable from the remaining supply")

        dt = dist[target]
        pi += np.minimum(np.where(np.isfinite(dist), dist, dt), dt)

        path = []
        v = target
        while pred_arc[v] >= 0:
            a, dr = int(pred_arc[v]), int(pred_dir[v])
            path.append((a, dr))
            v = net.tail[a] if dr > 0 else net.head[a]
        source = v
        delta = min(excess[source], -excess[target])
        for a, dr in path:
            if dr < 0:
                delta = min(delta, x[a])
        for a, dr in path:
            if dr > 0:
                x[a] += delta
            elif x[a] <= delta:
                x[a] = 0.0
            else:
                x[a] -= delta
        excess[source] -= delta
        excess[target] += delta
    return x


def _solve(graph: Graph, mask: NodeMask, demand: np.ndarray) -> FlowResult:
    b = np.asarray(demand, dtype=np.float64).reshape(-1)
    if b.shape[0] != len(mask):
        raise ValueError(f"measure has {b.shape[0]} entries, mask has {len(mask)}")
    if not np.all(np.isfinite(b)):
        raise ValueError("measures must be finite")
    n = graph.num_nodes
    supply = np.zeros(n + 1)
    supply[mask.members] = b
    scale = float(np.abs(b).sum())
    imbalance = float(b.sum())
    if mask.is_full() and abs(imbalance) > 1e-9 * max(scale, 1e-300) and scale > 0:
        raise InfeasibleFlowError(f"unbalanced measures: total difference {imbalance:.3e}")
    supply[n] = -imbalance if not mask.is_full() else 0.0

    net = _build_network(graph, mask)
    tol = 1e-14 * max(scale, 1.0)
    x = _successive_shortest_paths(net, supply, tol)

    f = np.zeros(graph.num_edges)
    edge = np.asarray(net.edge)
    sign = np.asarray(net.sign)
    real = edge >= 0
    np.add.at(f, edge[real], sign[real] * x[real])
    if graph.directed:
        f = np.maximum(f, 0.0)
    residual_vec = incidence(graph, mask).apply(f[:, None])[:, 0] - b
    residual = float(np.abs(residual_vec).max()) if residual_vec.size else 0.0
    if residual > 1e-9 * max(scale, 1.0):
        raise InfeasibleFlowError(f"could not route all mass (residual {residual:.3e})")
    cost = float(np.sum(graph.weights * np.abs(f)))
    return FlowResult(cost, f, residual)


def w1_flow(graph: Graph, mu, gamma) -> FlowResult:
    """W1 between two measures over all nodes as a min-cost flow with ``S f = gamma - mu``."""
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    gamma = np.asarray(gamma, dtype=np.float64).reshape(-1)
    if mu.shape != (graph.num_nodes,) or gamma.shape != (graph.num_nodes,):
        raise ValueError("measures must have one entry per node")
    return _solve(graph, graph.full_mask(), gamma - mu)


def partial_w1_flow(graph: Graph, mask, mu, gamma) -> FlowResult:
    """Partial W1: conservation is enforced only on the rows in ``mask``."""
    mask = as_mask(mask, graph.num_nodes)
    if len(mask) == 0:
        raise ValueError("mask must be nonempty")
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    gamma = np.asarray(gamma, dtype=np.float64).reshape(-1)
    if mu.shape != gamma.shape:
        raise ValueError("mu and gamma differ in length")
    return _solve(graph, mask, gamma - mu)


def classic_w1_oracle(graph: Graph, mu, gamma) -> ClassicOTResult:
    """Transport LP over the shortest-path cost matrix (small graphs only)."""
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    gamma = np.asarray(gamma, dtype=np.float64).reshape(-1)
    if (mu < 0).any() or (gamma < 0).any():
        raise ValueError("classic W1 needs nonnegative measures")
    total = mu.sum()
    if abs(total - gamma.sum()) > 1e-9 * max(total, 1.0):
        raise ValueError("classic W1 needs balanced measures")
    src = np.flatnonzero(mu > 0)
    dst = np.flatnonzero(gamma > 0)
    if src.size == 0:
        return ClassicOTResult(0.0, np.zeros((0, dst.size)), src, dst)
    D = shortest_path_costs(graph, src)[:, dst]
    ns, nt = src.size, dst.size
    finite = np.isfinite(D)
    c = np.where(finite, D, 0.0).ravel()
    bounds = [(0, None) if ok else (0, 0) for ok in finite.ravel()]
    A_rows = np.kron(np.eye(ns), np.ones((1, nt)))
    A_cols = np.kron(np.ones((1, ns)), np.eye(nt))
    res = linprog(
        c,
        A_eq=np.vstack([A_rows, A_cols]),
        b_eq=np.concatenate([mu[src], gamma[dst]]),
        bounds=bounds,
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise InfeasibleFlowError(f"transport LP failed: {res.message}")
    plan = np.maximum(res.x.reshape(ns, nt), 0.0)
    return ClassicOTResult(float(np.sum(np.where(finite, D, 0.0) * plan)), plan, src, dst)


def check_monotonicity(graph: Graph, mu, gamma, chain, tol: float = 1e-9):
    """Costs of (W1, partial W1 on chain[1], partial W1 on chain[2]) for nested masks.

    Raises MonotonicityViolation if the costs do not decrease along the chain.
    """
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    gamma = np.asarray(gamma, dtype=np.float64).reshape(-1)
    masks = [as_mask(c, graph.num_nodes) for c in chain]
    for outer, inner in zip(masks, masks[1:]):
        if not np.isin(inner.members, outer.members).all():
            raise ValueError("masks must be nested")
    costs = []
    for m in masks:
        if m.is_full():
            costs.append(w1_flow(graph, mu, gamma).cost)
        else:
            costs.append(partial_w1_flow(graph, m, mu[m.members], gamma[m.members]).cost)
    scale = tol * max(1.0, costs[0])
    for a, b in zip(costs, costs[1:]):
        if b > a + scale:
            raise MonotonicityViolation(f"partial cost {b} exceeds enclosing cost {a}")
    if costs[-1] < -scale:
        raise MonotonicityViolation("negative cost")
    return tuple(costs)
