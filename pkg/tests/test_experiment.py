import numpy as np
import pytest

from qwloss.data import Dataset, one_hot
from qwloss.experiment import (
    evaluate,
    flow_histogram,
    predict,
    raw_output,
    run_seeds,
    split_nodes,
    summarize,
    train,
)
from qwloss.graph import NodeMask, build_graph, incidence
from qwloss.models import ModelSpec
from qwloss.qw import QWConfig
from qwloss.synthetic import make_convex_surrogate, make_sbm


def sbm(intra, seed=0, n=100):
    ds = make_sbm(n, 4, intra, 6.0, 16, 1.0, seed)
    return ds.with_split(*split_nodes(n, ds.classes, seed=seed))


# -- splits -------------------------------------------------------------------

def test_split_sizes_one_class():
    tr, va, te = split_nodes(10, None, seed=4)
    assert (len(tr), len(va), len(te)) == (6, 2, 2)
    assert not set(tr.members) & set(va.members)
    assert not set(tr.members) & set(te.members)
    assert not set(va.members) & set(te.members)


def test_split_deterministic():
    a = split_nodes(50, np.arange(50) % 3, seed=7)
    b = split_nodes(50, np.arange(50) % 3, seed=7)
    c = split_nodes(50, np.arange(50) % 3, seed=8)
    assert all(np.array_equal(x.members, y.members) for x, y in zip(a, b))
    assert not np.array_equal(a[0].members, c[0].members)


def test_split_stratified():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 4, 100)
    parts = split_nodes(100, labels, seed=1)
    for c in range(4):
        n_c = int((labels == c).sum())
        for mask, r in zip(parts, (0.6, 0.2, 0.2)):
            assert abs(int((labels[mask.members] == c).sum()) - r * n_c) <= 1


def test_split_small_class_warns(caplog):
    tr, va, te = split_nodes(4, [0, 0, 0, 1], seed=0)
    assert "only 1 nodes" in caplog.text
    assert len(tr) + len(va) + len(te) == 4


def test_split_bad_ratios():
    with pytest.raises(ValueError):
        split_nodes(10, None, (0.7, 0.3, 0.2))


# -- prediction and metrics ---------------------------------------------------

def test_traditional_has_no_flow():
    ds = sbm(0.8)
    tm = train(ds, ModelSpec("gcn", hidden=8), "traditional", QWConfig(epochs=5), seed=0)
    assert tm.F is None
    pred, _ = predict(tm, ds)
    assert np.array_equal(pred, raw_output(tm, ds))


def test_prediction_decomposition():
    ds = sbm(0.3)
    tm = train(ds, ModelSpec("gcn", hidden=8), "qw-alg2", QWConfig(epochs=20, patience=0), seed=0)
    pred, cls = predict(tm, ds)
    diff = pred - raw_output(tm, ds)
    assert np.abs(diff - incidence(ds.graph, None).apply(tm.F)).max() < 1e-12
    assert np.array_equal(cls, np.argmax(pred + 3.0, axis=1))


def test_labeled_rows_match_targets_after_admm():
    ds = make_convex_surrogate()
    cfg = QWConfig(lam=10, lr=0.05, lr_flow=0.05, weight_decay=0, inner_steps=20, epochs=1500, lr_decay=0.99,
                   tol=1e-5, rel_tol=1e-8, patience=0)
    tm = train(ds, ModelSpec("linear", task="regression"), "qw-alg2", cfg, seed=0)
    tau = tm.record["primal_residual"]
    assert tm.record["stop_reason"] == "converged" and tau < 1e-4
    pred, _ = predict(tm, ds)
    gap = np.abs(pred[ds.train.members] - ds.labels[ds.train.members]).max()
    assert gap <= tau + 1e-12


def test_evaluate_examples():
    g = build_graph(4, [(0, 1), (2, 3)])
    Y = one_hot([0, 1, 0, 1])
    ds = Dataset(g, np.eye(4), Y, NodeMask([], 4), NodeMask([], 4), NodeMask([0, 1, 2, 3], 4))
    m = evaluate(Y, ds, ds.test)
    assert (m.accuracy, m.mse, m.count) == (1.0, 0.0, 4)
    assert evaluate(np.full((4, 2), 0.5), ds, None).mse == 0.25
    with pytest.raises(ValueError):
        evaluate(Y, ds, [])


def test_metrics_permutation_invariant():
    rng = np.random.default_rng(2)
    n = 30
    classes = rng.integers(0, 3, n)
    g = build_graph(n, [(i, i + 1) for i in range(n - 1)])
    ds = Dataset(g, np.ones((n, 1)), one_hot(classes, 3), NodeMask([], n), NodeMask([], n), NodeMask(range(n), n))
    pred = rng.random((n, 3))
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    gp = build_graph(n, [(inv[u], inv[v]) for u, v in g.edges])
    dsp = Dataset(gp, np.ones((n, 1)), one_hot(classes[perm], 3), NodeMask([], n), NodeMask([], n),
                  NodeMask(range(n), n))
    a, b = evaluate(pred, ds, ds.test), evaluate(pred[perm], dsp, dsp.test)
    assert a.accuracy == b.accuracy
    assert a.mse == pytest.approx(b.mse, rel=1e-14)


def test_run_seeds_deterministic():
    ds = sbm(0.3)
    spec = ModelSpec("gcn", hidden=8)
    a = run_seeds(ds, spec, "qw-alg1", QWConfig(epochs=10, patience=5), [0, 1])
    b = run_seeds(ds, spec, "qw-alg1", QWConfig(epochs=10, patience=5), [0, 1])
    assert [m for _, m in a] == [m for _, m in b]
    mean, std = summarize([m.accuracy for _, m in a])
    assert 0 <= mean <= 1 and std >= 0


def test_unknown_loss_kind():
    with pytest.raises(ValueError):
        train(sbm(0.8), ModelSpec("gcn"), "qw-alg3", QWConfig())


# -- flow histogram -----------------------------------------------------------

def test_histogram_zero_flow():
    h = flow_histogram(np.zeros((5, 2)))
    assert h.counts.tolist() == [10] and h.mean == 0.0


def test_histogram_symmetric_and_counts():
    F = np.array([[-2.0, 1.0], [2.0, -1.0], [0.5, -0.5]])
    h = flow_histogram(F, bins=8)
    assert abs(h.mean) < 1e-15
    assert h.counts.sum() == 6 and len(h.edges) == 9
    assert h.edges[0] == -2.0 and h.edges[-1] == 2.0


def test_homophilic_flow_centered():
    ds = sbm(0.8, n=200)
    tm = train(ds, ModelSpec("gcn", hidden=16), "qw-alg2", QWConfig(epochs=200), seed=0)
    h = flow_histogram(tm.F)
    assert abs(h.mean) <= 0.05 * h.std, f"mean {h.mean:.3g}, std {h.std:.3g}"


def test_large_lambda_close_to_traditional():
    # synthetic homophilic graph, same seeds and splits
    ds = make_sbm(200, 4, 0.8, 6.0, 16, 1.0, 0)
    spec = ModelSpec("gcn", hidden=16)
    base = run_seeds(ds, spec, "traditional", QWConfig(epochs=200), range(3))
    big = run_seeds(ds, spec, "qw-alg1", QWConfig(lam=1e3, epochs=200), range(3))
    a = summarize([m.accuracy for _, m in base])[0]
    b = summarize([m.accuracy for _, m in big])[0]
    assert abs(a - b) <= 0.02, f"traditional {a:.4f}, qw-alg1 lam=1e3 {b:.4f}"
