"""GNN estimators g(X, A; theta): GCN, MLP, APPNP-style propagation, linear."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .graph import Graph

TASKS = ("classification", "regression")
MODEL_KINDS = ("gcn", "mlp", "appnp", "linear")


class NormalizedAdjacency:
    """D^-1/2 (A_w + I) D^-1/2 with D the weighted degree of A_w + I.

    ``weights`` is either a fixed array (the operator is precomputed as a
    sparse matrix) or a |E| x 1 tensor, in which case propagation is built
    from differentiable kernels so gradients reach the weights.  Directed
    graphs are symmetrized for propagation.
    """

    def __init__(self, graph: Graph, weights):
        self.graph = graph
        n, m = graph.num_nodes, graph.num_edges
        self.learned = isinstance(weights, Tensor)
        if self.learned:
            if weights.shape != (m, 1):
                raise ValueError(f"need {m}x1 edge weights, got {weights.shape}")
            if (weights.value <= 0).any():
                raise ValueError("edge weights must be positive")
            self.weights = weights
            cols = np.arange(m)
            self._to_head = sp.csr_matrix((np.ones(m), (graph.heads, cols)), shape=(n, m))
            self._to_tail = sp.csr_matrix((np.ones(m), (graph.tails, cols)), shape=(n, m))
            ends = self._to_head + self._to_tail
            deg = ad.add(ad.spmm(ends, weights), ad.constant(np.ones((n, 1))))
            self._dinv = ad.power(deg, -0.5)
            self.matrix = None
        else:
            w = np.asarray(weights, dtype=np.float64).reshape(-1)
            if w.shape[0] != m:
                raise ValueError(f"need {m} edge weights, got {w.shape[0]}")
            if not (w > 0).all():
                raise ValueError("edge weights must be positive")
            self.weights = w
            a = sp.coo_matrix((w, (graph.heads, graph.tails)), shape=(n, n))
            a = (a + a.T + sp.identity(n)).tocsr()
            d = np.asarray(a.sum(axis=1)).reshape(-1)
            dinv = sp.diags(d ** -0.5)
            self.matrix = (dinv @ a @ dinv).tocsr()

    def propagate(self, H: Tensor) -> Tensor:
        if not self.learned:
            return ad.spmm(self.matrix, H)
        g = self.graph
        Hs = ad.scale_rows(H, self._dinv)
        to_head = ad.spmm(self._to_head, ad.scale_rows(ad.gather_rows(Hs, g.tails), self.weights))
        to_tail = ad.spmm(self._to_tail, ad.scale_rows(ad.gather_rows(Hs, g.heads), self.weights))
        return ad.scale_rows(ad.add(ad.add(Hs, to_head), to_tail), self._dinv)

    def dense(self) -> np.ndarray:
        if not self.learned:
            return self.matrix.toarray()
        with ad.no_grad():
            return self.propagate(ad.constant(np.eye(self.graph.num_nodes))).value


def normalize_adjacency(graph: Graph, edge_weights=None) -> NormalizedAdjacency:
    if edge_weights is None:
        edge_weights = graph.weights
    return NormalizedAdjacency(graph, edge_weights)


@dataclass
class ModelSpec:
    kind: str = "gcn"
    hidden: int = 64
    dropout: float = 0.5
    alpha: float = 0.1
    K: int = 10
    task: str = "classification"

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")


def _glorot(rng, fan_in, fan_out):
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=(fan_in, fan_out))


def _features_times(X, W: Tensor) -> Tensor:
    if sp.issparse(X):
        return ad.spmm(X, W)
    return ad.matmul(ad.constant(X), W)


def appnp_propagate(H: Tensor, adj: NormalizedAdjacency, alpha: float, K: int) -> Tensor:
    Z = H
    for _ in range(K):
        Z = ad.add(ad.scale(adj.propagate(Z), 1.0 - alpha), ad.scale(H, alpha))
    return Z


class Model:
    """Parameters plus a forward pass; ``rng=None`` means evaluation mode."""

    def __init__(self, spec: ModelSpec, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.spec = spec
        self.in_dim, self.out_dim = int(in_dim), int(out_dim)
        h = spec.hidden
        if spec.kind == "linear":
            shapes = [(in_dim, out_dim), (1, out_dim)]
        else:
            shapes = [(in_dim, h), (1, h), (h, out_dim), (1, out_dim)]
        self.params = []
        for shape in shapes:
            if shape[0] == 1:
                self.params.append(ad.parameter(np.zeros(shape)))
            else:
                self.params.append(ad.parameter(_glorot(rng, *shape)))

    def state(self) -> list:
        return [p.value.copy() for p in self.params]

    def load_state(self, values):
        if len(values) != len(self.params):
            raise ValueError("state does not match the model's parameter list")
        for p, v in zip(self.params, values):
            if p.shape != np.shape(v):
                raise ValueError(f"parameter shape {p.shape} vs saved {np.shape(v)}")
            p.value = np.array(v, dtype=np.float64, copy=True)

    def _head(self, out: Tensor) -> Tensor:
        return ad.softmax(out) if self.spec.task == "classification" else out

    def forward(self, X, adj: NormalizedAdjacency | None, rng=None) -> Tensor:
        s = self.spec
        kind = s.kind
        if kind == "linear":
            W, b = self.params
            return self._head(ad.add(_features_times(X, W), b))
        W1, b1, W2, b2 = self.params
        if kind == "gcn":
            h = ad.add(adj.propagate(_features_times(X, W1)), b1)
            h = ad.dropout(ad.relu(h), s.dropout, rng)
            out = ad.add(adj.propagate(ad.matmul(h, W2)), b2)
            return self._head(out)
        h = ad.dropout(ad.relu(ad.add(_features_times(X, W1), b1)), s.dropout, rng)
        out = ad.add(ad.matmul(h, W2), b2)
        if kind == "appnp":
            out = appnp_propagate(out, adj, s.alpha, s.K)
        return self._head(out)


def build_model(spec: ModelSpec, in_dim: int, out_dim: int, rng=None) -> Model:
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    return Model(spec, in_dim, out_dim, rng)


def gcn_forward(model: Model, X, adj, rng=None) -> Tensor:
    return model.forward(X, adj, rng)


def mlp_forward(model: Model, X, adj=None, rng=None) -> Tensor:
    return model.forward(X, adj, rng)


def appnp_forward(model: Model, X, adj, rng=None) -> Tensor:
    return model.forward(X, adj, rng)
