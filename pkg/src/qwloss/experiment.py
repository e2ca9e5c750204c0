"""Training orchestration, transductive prediction, splits and metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .graph import NodeMask, as_mask, incidence
from .models import ModelSpec, build_model, normalize_adjacency
from .qw import SOLVERS, EdgePredictor, QWConfig, SolverResult, predict_edge_weights

logger = logging.getLogger(__name__)

LOSS_KINDS = tuple(SOLVERS)


@dataclass
class Metrics:
    accuracy: float | None
    mse: float
    loss: float | None = None
    count: int = 0


@dataclass
class TrainedModel:
    spec: ModelSpec
    config: QWConfig
    loss_kind: str
    seed: int
    theta: list
    F: np.ndarray | None
    Z: np.ndarray | None = None
    edge_state: list | None = None
    record: dict = field(default_factory=dict)


def split_nodes(num_nodes, labels=None, ratios=(0.6, 0.2, 0.2), seed=0):
    """Stratified random split into (train, val, test) masks.

    Each class is shuffled and cut at the ratio boundaries; leftovers from
    rounding go to the last split that has room.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or sum(ratios) > 1 + 1e-12:
        raise ValueError(f"bad split ratios {ratios}")
    rng = np.random.default_rng(seed)
    if labels is None:
        labels = np.zeros(num_nodes, dtype=np.int64)
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = np.argmax(labels, axis=1)
    parts = ([], [], [])
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n = idx.size
        if n < 3 and sum(r > 0 for r in ratios) > n:
            logger.warning("class %s has only %d nodes; splitting proportionally", c, n)
        n_train = int(round(ratios[0] * n))
        n_val = int(round(ratios[1] * n))
        if sum(ratios) >= 1 - 1e-12:
            n_test = n - n_train - n_val
        else:
            n_test = int(round(ratios[2] * n))
        n_test = max(0, min(n_test, n - n_train - n_val))
        parts[0].append(idx[:n_train])
        parts[1].append(idx[n_train:n_train + n_val])
        parts[2].append(idx[n_train + n_val:n_train + n_val + n_test])
    return tuple(NodeMask(np.concatenate(p) if p else [], num_nodes) for p in parts)


def _solver_output(model, dataset, edge_state, F):
    adj = None
    if edge_state is not None:
        xi = EdgePredictor(dataset.num_classes)
        xi.load_state(edge_state)
        with ad.no_grad():
            adj = normalize_adjacency(dataset.graph, ad.constant(predict_edge_weights(ad.constant(F), xi).value))
    elif model.spec.kind != "mlp" and model.spec.kind != "linear":
        adj = normalize_adjacency(dataset.graph)
    with ad.no_grad():
        return model.forward(dataset.features, adj, None).value


def train(dataset: Dataset, spec: ModelSpec, loss_kind: str, config: QWConfig, seed: int = 0) -> TrainedModel:
    if loss_kind not in SOLVERS:
        raise ValueError(f"unknown loss kind {loss_kind!r}; choose from {LOSS_KINDS}")
    if spec.task != dataset.task:
        spec = ModelSpec(**{**spec.__dict__, "task": dataset.task})
    init_seq, solver_seq = np.random.SeedSequence(seed).spawn(2)
    model = build_model(spec, dataset.num_features, dataset.num_classes, np.random.default_rng(init_seq))
    result: SolverResult = SOLVERS[loss_kind](model, dataset, config, solver_seq)
    record = {
        "history": result.history,
        "best_epoch": result.best_epoch,
        "epochs_run": result.epochs_run,
        "primal_residual": result.primal_residual,
        "stop_reason": result.stop_reason,
        "seconds": result.seconds,
    }
    return TrainedModel(spec, config, loss_kind, seed, model.state(), result.F, result.Z, result.edge_state, record)


def raw_output(trained: TrainedModel, dataset: Dataset) -> np.ndarray:
    model = build_model(trained.spec, dataset.num_features, dataset.num_classes, 0)
    model.load_state(trained.theta)
    return _solver_output(model, dataset, trained.edge_state, trained.F)


def predict(trained: TrainedModel, dataset: Dataset):
    """Combined prediction g(X, A) + S_V F for every node and the argmax class."""
    g = raw_output(trained, dataset)
    if trained.F is not None:
        g = g + incidence(dataset.graph, None).apply(trained.F)
    return g, np.argmax(g, axis=1)


def evaluate(predictions, dataset: Dataset, mask) -> Metrics:
    mask = as_mask(mask, dataset.graph.num_nodes)
    if len(mask) == 0:
        raise ValueError("cannot evaluate on an empty mask")
    idx = mask.members
    p = np.asarray(predictions)[idx]
    Y = dataset.labels[idx]
    mse = float(np.mean((p - Y) ** 2))
    acc = None
    if dataset.task == "classification":
        acc = float(np.mean(np.argmax(p, axis=1) == dataset.classes[idx]))
    return Metrics(acc, mse, None, int(idx.size))


@dataclass
class FlowHistogram:
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    variance: float
    std: float
    count: int


def flow_histogram(F, bins: int = 50) -> FlowHistogram:
    """Fixed-width bins over [min, max] of the flow values."""
    v = np.asarray(F, dtype=np.float64).ravel()
    if v.size == 0:
        return FlowHistogram(np.array([0.0, 0.0]), np.array([0]), 0.0, 0.0, 0.0, 0)
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        edges = np.array([lo, hi])
        counts = np.array([v.size])
    else:
        counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    return FlowHistogram(edges, counts, float(v.mean()), float(v.var()), float(v.std()), int(v.size))


def run_seeds(dataset: Dataset, spec: ModelSpec, loss_kind: str, config: QWConfig, seeds, ratios=(0.6, 0.2, 0.2),
              keep_split=False):
    """Train once per seed (fresh stratified split unless ``keep_split``); returns test metrics per seed."""
    out = []
    for s in seeds:
        ds = dataset
        if not keep_split:
            tr, va, te = split_nodes(dataset.graph.num_nodes, dataset.classes if dataset.task == "classification" else None,
                                     ratios, seed=s)
            ds = dataset.with_split(tr, va, te)
        tm = train(ds, spec, loss_kind, config, seed=s)
        pred, _ = predict(tm, ds)
        out.append((tm, evaluate(pred, ds, ds.test)))
    return out


def summarize(values):
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())
