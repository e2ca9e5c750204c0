"""Acceptance criteria, one pass/fail line each.

Run with ``pytest tests/test_acceptance.py -v``; the criterion lines are
printed as they finish and repeated in the terminal summary.
"""

import os
import time
from pathlib import Path

import pytest

from qwloss.checks import (
    check_gradients,
    check_metric_axioms,
    check_monotone_masks,
    check_oracle,
    check_reduction,
    check_shift,
)
from qwloss.cli import main
from qwloss.experiment import run_seeds, split_nodes, summarize, train
from qwloss.io import load_dataset
from qwloss.models import ModelSpec
from qwloss.qw import QWConfig
from qwloss.synthetic import make_convex_surrogate, make_sbm

# tolerances and budgets
METRIC_TOL = 1e-8
ORACLE_TOL = 1e-8
SHIFT_TOL = 1e-12
GRAD_TOL = 1e-5
FIT_SLACK = 1e-6
RESIDUAL_TOL = 1e-4
HETERO_GAIN = 0.01
HOMO_BAND = 0.02
CORA_MEAN, CORA_BAND = 0.8744, 0.02
CORA_QW_SLACK = 0.005
OVERHEAD = 2.0

RESULTS = []


def report(capsys, number, passed, detail, status=None):
    status = status or ("PASS" if passed else "FAIL")
    line = f"criterion {number:>2}: {status}  {detail}"
    RESULTS.append(line)
    with capsys.disabled():
        print("\n" + line)
    return passed


def timed_check(capsys, number, fn, budget, tol=None, **kw):
    t0 = time.perf_counter()
    r = fn(**kw)
    dt = time.perf_counter() - t0
    ok = r.passed and dt < budget and (tol is None or r.worst < tol)
    report(capsys, number, ok, f"{r.name}: {r.detail} ({dt:.1f}s, budget {budget:.0f}s)")
    assert ok


def test_c01_metric_axioms(capsys):
    timed_check(capsys, 1, check_metric_axioms, 30, tol=METRIC_TOL, instances=200)


def test_c02_monotonicity(capsys):
    timed_check(capsys, 2, check_monotone_masks, 30, instances=200)


def test_c03_oracle_equivalence(capsys):
    timed_check(capsys, 3, check_oracle, 60, tol=ORACLE_TOL, instances=100)


def test_c04_shift_invariance(capsys):
    t0 = time.perf_counter()
    r = check_shift(instances=100)
    ok = r.passed and r.worst < SHIFT_TOL
    report(capsys, 4, ok, f"{r.name}: {r.detail} ({time.perf_counter() - t0:.1f}s)")
    assert ok


def test_c05_gradient_fidelity(capsys):
    r = check_gradients()
    ok = r.passed and r.worst < GRAD_TOL
    report(capsys, 5, ok, f"{r.name}: {r.detail}")
    assert ok


def test_c06_reduction_identity(capsys):
    r = check_reduction(instances=50)
    report(capsys, 6, r.passed, f"{r.name}: {r.detail}")
    assert r.passed


# settings that run each solver to numerical convergence on the convex surrogate
SURROGATE_PLAIN = QWConfig(lam=10, lr=0.05, lr_flow=0.05, weight_decay=0, epochs=3000, lr_decay=0.998, patience=0)
SURROGATE_ADMM = QWConfig(lam=10, lr=0.05, lr_flow=0.05, weight_decay=0, inner_steps=20, epochs=1500,
                          lr_decay=0.99, tol=1e-5, rel_tol=1e-8, patience=0)


def test_c07_fit_ordering(capsys):
    ds = make_convex_surrogate()
    spec = ModelSpec("linear", task="regression")
    t0 = time.perf_counter()
    worst = []
    ok = True
    for init in range(5):
        fits = {}
        for loss, cfg in (("traditional", SURROGATE_PLAIN), ("qw-alg1", SURROGATE_PLAIN), ("qw-alg2", SURROGATE_ADMM)):
            tm = train(ds, spec, loss, cfg, seed=init)
            fits[loss] = tm.record["history"]["fit"][-1]
            if loss == "qw-alg2":
                res = tm.record["primal_residual"]
        ordered = fits["qw-alg2"] <= fits["qw-alg1"] + FIT_SLACK and fits["qw-alg1"] <= fits["traditional"] + FIT_SLACK
        ok &= ordered and res < RESIDUAL_TOL
        worst.append((fits["qw-alg2"], fits["qw-alg1"], fits["traditional"], res))
    dt = time.perf_counter() - t0
    ok &= dt < 120
    a = max(w[0] for w in worst)
    b = max(w[1] for w in worst)
    c = min(w[2] for w in worst)
    r = max(w[3] for w in worst)
    report(capsys, 7, ok, f"5 inits: fit ADMM <= {a:.3g}, relaxed <= {b:.4g}, plain >= {c:.4g}, "
                          f"ADMM residual <= {r:.2e} ({dt:.0f}s, budget 120s)")
    assert ok


def sbm_accuracy(intra, loss, seeds=range(10)):
    ds = make_sbm(200, 4, intra, 6.0, 16, 1.0, seed=1)
    res = run_seeds(ds, ModelSpec("gcn"), loss, QWConfig(), seeds)
    return summarize([m.accuracy for _, m in res])


def test_c08_desk_scale_effect(capsys):
    t0 = time.perf_counter()
    het_base, het_qw = sbm_accuracy(0.2, "traditional"), sbm_accuracy(0.2, "qw-alg2")
    hom_base, hom_qw = sbm_accuracy(0.8, "traditional"), sbm_accuracy(0.8, "qw-alg2")
    dt = time.perf_counter() - t0
    gain = het_qw[0] - het_base[0]
    drift = hom_qw[0] - hom_base[0]
    ok = gain >= HETERO_GAIN and abs(drift) <= HOMO_BAND and dt < 600
    report(capsys, 8, ok,
           f"heterophilic {het_base[0]:.4f}+-{het_base[1]:.4f} -> {het_qw[0]:.4f}+-{het_qw[1]:.4f} "
           f"(gain {100 * gain:+.2f} pts, need >= +1); homophilic {hom_base[0]:.4f} -> {hom_qw[0]:.4f} "
           f"({100 * drift:+.2f} pts, need within 2) ({dt:.0f}s, budget 600s)")
    assert ok


CORA = Path(os.environ.get("QWLOSS_CORA", Path(__file__).resolve().parents[1] / "data" / "cora"))


def test_c09_cora_spot_check(capsys):
    if not CORA.is_dir():
        report(capsys, 9, True, f"(optional) no Cora files at {CORA}; set QWLOSS_CORA", status="SKIP")
        pytest.skip("Cora files not on disk")
    ds = load_dataset(CORA, "citation-style")
    t0 = time.perf_counter()
    out = {}
    for loss in ("traditional", "qw-alg2"):
        accs = []
        for s in range(10):
            d = ds.with_split(*split_nodes(ds.graph.num_nodes, ds.classes, seed=s))
            accs.append(run_seeds(d, ModelSpec("gcn"), loss, QWConfig(), [s], keep_split=True)[0][1].accuracy)
        out[loss] = summarize(accs)
    dt = time.perf_counter() - t0
    base, qw = out["traditional"][0], out["qw-alg2"][0]
    ok = abs(base - CORA_MEAN) <= CORA_BAND and qw >= base - CORA_QW_SLACK and dt < 1800
    report(capsys, 9, ok, f"Cora GCN {base:.4f} (band {CORA_MEAN:.4f}+-{CORA_BAND}), GCN+QW {qw:.4f} "
                          f"(need >= {base - CORA_QW_SLACK:.4f}) ({dt:.0f}s)")
    assert ok


def best_time(ds, loss, cfg, repeats=3):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        train(ds, ModelSpec("gcn"), loss, cfg, seed=0)
        times.append(time.perf_counter() - t0)
    return min(times)


def test_c10_overhead(capsys):
    ds = make_sbm(200, 4, 0.2, 6.0, 16, 1.0, seed=1)
    ds = ds.with_split(*split_nodes(200, ds.classes, seed=0))
    # fixed budget: no early stopping, no convergence exit
    cfg = QWConfig(epochs=200, inner_steps=1, patience=0, tol=0.0)
    base = best_time(ds, "traditional", cfg)
    alg1 = best_time(ds, "qw-alg1", cfg)
    alg2 = best_time(ds, "qw-alg2", cfg)
    ok = alg1 <= OVERHEAD * base and alg2 <= OVERHEAD * base
    report(capsys, 10, ok, f"200 epochs: traditional {base:.2f}s, qw-alg1 {alg1 / base:.2f}x, "
                           f"qw-alg2 (J=1) {alg2 / base:.2f}x, bound {OVERHEAD:.0f}x")
    assert ok


def test_c11_check_subcommand(capsys):
    with capsys.disabled():
        rc = main(["check"])
    report(capsys, 11, rc == 0, f"qwloss check exit status {rc}")
    assert rc == 0
