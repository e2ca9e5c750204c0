"""Stochastic block-model benchmarks with Gaussian class-conditional features."""

from __future__ import annotations

import numpy as np

from .data import Dataset, one_hot
from .graph import NodeMask, build_graph


def sbm_graph_edges(classes, intra_rate, avg_degree, rng):
    """Sample edges so that roughly ``intra_rate`` of them join same-class nodes."""
    classes = np.asarray(classes)
    n = classes.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    same = classes[iu] == classes[ju]
    n_edges = avg_degree * n / 2.0
    p_in = min(1.0, intra_rate * n_edges / max(same.sum(), 1))
    p_out = min(1.0, (1.0 - intra_rate) * n_edges / max((~same).sum(), 1))
    keep = rng.random(iu.shape[0]) < np.where(same, p_in, p_out)
    return np.stack([iu[keep], ju[keep]], axis=1)


def make_sbm(
    num_nodes=200,
    num_classes=4,
    intra_rate=0.8,
    avg_degree=6.0,
    num_features=16,
    feature_signal=1.0,
    seed=0,
) -> Dataset:
    """SBM graph with balanced classes; features are class means plus unit noise.

    The returned dataset has empty split masks; use ``experiment.split_nodes``.
    """
    rng = np.random.default_rng(seed)
    classes = rng.permutation(np.arange(num_nodes) % num_classes)
    edges = sbm_graph_edges(classes, intra_rate, avg_degree, rng)
    graph = build_graph(num_nodes, edges)
    means = rng.standard_normal((num_classes, num_features)) * feature_signal / np.sqrt(num_features)
    X = means[classes] + rng.standard_normal((num_nodes, num_features)) / np.sqrt(num_features)
    empty = NodeMask([], num_nodes)
    return Dataset(
        graph, X, one_hot(classes, num_classes), empty, empty, empty,
        task="classification", classes=classes,
    )


def make_convex_surrogate(num_nodes=30, extra_edges=30, num_features=3, num_targets=2, seed=0) -> Dataset:
    """Ring plus random chords with Gaussian features and real targets.

    Paired with a linear model and least squares every objective is convex.
    Nodes with index % 3 in {0, 1} are labeled; the rest form the test mask.
    """
    rng = np.random.default_rng(seed)
    n = num_nodes
    pairs = [(i, (i + 1) % n) for i in range(n)]
    pairs += [tuple(rng.choice(n, 2, replace=False)) for _ in range(extra_edges)]
    seen, edges = set(), []
    for u, v in pairs:
        key = (min(u, v), max(u, v))
        if key not in seen:
            seen.add(key)
            edges.append(key)
    X = rng.standard_normal((n, num_features))
    Y = rng.standard_normal((n, num_targets))
    idx = np.arange(n)
    empty = NodeMask([], n)
    return Dataset(build_graph(n, edges), X, Y, NodeMask(idx[idx % 3 != 2], n), empty,
                   NodeMask(idx[idx % 3 == 2], n), task="regression")
