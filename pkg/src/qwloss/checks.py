"""Self-checks: metric axioms, monotonicity, oracle agreement, shift
invariance, finite-difference gradients and the F = 0 reduction identity.

Each check returns a CheckResult; ``run_all`` drives them for the ``check``
subcommand and the acceptance suite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .graph import NodeMask, build_graph, incidence
from .models import ModelSpec, build_model, normalize_adjacency
from .ot import MonotonicityViolation, check_monotonicity, classic_w1_oracle, w1_flow
from .qw import (
    BREGMAN_KINDS,
    admm_objective,
    relaxed_objective,
    traditional_loss,
)

FD_STEP = 1e-6
GRAD_TOL = 1e-5
METRIC_TOL = 1e-8
ORACLE_TOL = 1e-8
SHIFT_TOL = 1e-12


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float
    worst: float = 0.0


def random_connected_graph(rng, max_nodes, min_nodes=2, weighted=True):
    """Random spanning tree plus extra random edges; weights uniform in [0.1, 2]."""
    n = int(rng.integers(min_nodes, max_nodes + 1))
    order = rng.permutation(n)
    pairs = {tuple(sorted((int(order[i]), int(order[rng.integers(0, i)])))) for i in range(1, n)}
    for _ in range(int(rng.integers(0, n + 1))):
        u, v = rng.choice(n, 2, replace=False)
        pairs.add(tuple(sorted((int(u), int(v)))))
    pairs = sorted(pairs)
    w = rng.uniform(0.1, 2.0, len(pairs)) if weighted else None
    return build_graph(n, pairs, w)


def _measure(rng, n, total=1.0):
    x = rng.random(n)
    return total * x / x.sum()


def check_metric_axioms(instances=200, seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    fails = []
    for k in range(instances):
        g = random_connected_graph(rng, 10)
        n = g.num_nodes
        mu, gamma, zeta = (_measure(rng, n) for _ in range(3))
        d_mg = w1_flow(g, mu, gamma).cost
        d_gm = w1_flow(g, gamma, mu).cost
        d_mz = w1_flow(g, mu, zeta).cost
        d_zg = w1_flow(g, zeta, gamma).cost
        d_mm = w1_flow(g, mu, mu).cost
        viol = {
            "nonnegativity": max(0.0, -min(d_mg, d_gm, d_mz, d_zg)),
            "identity": d_mm,
            "symmetry": abs(d_mg - d_gm),
            "triangle": max(0.0, d_mg - d_mz - d_zg),
        }
        # distinct measures must be at positive distance
        if np.abs(mu - gamma).max() > 1e-6 and d_mg <= METRIC_TOL:
            viol["indiscernibles"] = 1.0
        bad = {a: v for a, v in viol.items() if v > METRIC_TOL}
        worst = max([worst] + [v for a, v in viol.items() if a != "indiscernibles"])
        if bad:
            fails.append((k, bad))
    detail = f"{instances} graphs, worst violation {worst:.2e}"
    if fails:
        detail += f"; first failure {fails[0]}"
    return CheckResult("metric axioms", not fails, detail, time.perf_counter() - t0, worst)


def check_monotone_masks(instances=200, seed=1) -> CheckResult:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    fails = []
    for k in range(instances):
        g = random_connected_graph(rng, 10, min_nodes=3)
        n = g.num_nodes
        # signed measures are allowed: only the ordering of costs is at stake
        mu = rng.standard_normal(n)
        gamma = rng.standard_normal(n)
        gamma += (mu.sum() - gamma.sum()) / n
        outer = np.sort(rng.choice(n, int(rng.integers(2, n + 1)), replace=False))
        inner = np.sort(rng.choice(outer, int(rng.integers(1, outer.size + 1)), replace=False))
        try:
            costs = check_monotonicity(g, mu, gamma, [None, outer, inner])
            if costs[-1] < 0:
                fails.append((k, costs))
        except MonotonicityViolation as exc:
            fails.append((k, str(exc)))
    detail = f"{instances} instances"
    if fails:
        detail += f"; {len(fails)} violations, first {fails[0]}"
    return CheckResult("monotonicity", not fails, detail, time.perf_counter() - t0)


def check_oracle(instances=100, seed=2) -> CheckResult:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(instances):
        g = random_connected_graph(rng, 8)
        n = g.num_nodes
        total = rng.uniform(0.5, 3.0)
        mu, gamma = _measure(rng, n, total), _measure(rng, n, total)
        # sparsify supports so the oracle plan is not trivially dense
        drop = rng.random(n) < 0.3
        if drop.all():
            drop[0] = False
        mu[drop] = 0.0
        mu *= total / mu.sum()
        worst = max(worst, abs(classic_w1_oracle(g, mu, gamma).cost - w1_flow(g, mu, gamma).cost))
    ok = worst < ORACLE_TOL
    return CheckResult("oracle equivalence", ok, f"{instances} graphs, max |diff| {worst:.2e}",
                       time.perf_counter() - t0, worst)


def check_shift(instances=100, seed=3) -> CheckResult:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(instances):
        g = random_connected_graph(rng, 10)
        n = g.num_nodes
        mu, gamma = _measure(rng, n), _measure(rng, n)
        delta = rng.standard_normal(n)
        a = w1_flow(g, mu, gamma).cost
        b = w1_flow(g, mu + delta, gamma + delta).cost
        worst = max(worst, abs(a - b))
    return CheckResult("shift invariance", worst < SHIFT_TOL, f"{instances} triples, max |diff| {worst:.2e}",
                       time.perf_counter() - t0, worst)


# -- gradients ------------------------------------------------------------------

def relative_error(analytic, numeric) -> float:
    """max |a - n| / max(max|a|, max|n|); zero when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if denom == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / denom)


def fd_gradient(fn, x: np.ndarray, h=FD_STEP) -> np.ndarray:
    """Central differences of the scalar fn() with respect to the array x (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = fn()
        x[i] = old - h
        fm = fn()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def gradient_error(build, params) -> float:
    """Worst relative error of backward() against central differences over ``params``."""
    for p in params:
        p.zero_grad()
    build().backward()
    analytic = [p.grad.copy() for p in params]

    def value():
        with ad.no_grad():
            return build().item()

    worst = 0.0
    for p, a in zip(params, analytic):
        worst = max(worst, relative_error(a, fd_gradient(value, p.value)))
    return worst


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def kernel_cases(rng):
    """(name, build, params) triples covering every differentiable kernel."""
    def P(*shape, positive=False, margin=False):
        if positive:
            return ad.parameter(rng.uniform(0.3, 2.0, shape))
        if margin:
            return ad.parameter(_away_from_zero(rng, shape))
        return ad.parameter(rng.standard_normal(shape))

    def probe(t):
        # random linear functional turns a matrix output into a scalar
        R = np.random.default_rng(7).standard_normal(t.shape)
        return ad.inner(t, R)

    cases = []
    a, b = P(4, 3), P(3, 5)
    cases.append(("matmul", lambda: probe(ad.matmul(a, b)), [a, b]))
    S = sp.random(5, 4, density=0.5, random_state=1, format="csr")
    c = P(4, 3)
    cases.append(("spmm", lambda: probe(ad.spmm(S, c)), [c]))
    d, e, bias = P(4, 3), P(4, 3), P(1, 3)
    cases.append(("add", lambda: probe(ad.add(d, e)), [d, e]))
    cases.append(("add row bias", lambda: probe(ad.add(d, bias)), [d, bias]))
    cases.append(("sub", lambda: probe(ad.sub(d, e)), [d, e]))
    cases.append(("mul", lambda: probe(ad.mul(d, e)), [d, e]))
    cases.append(("scale", lambda: probe(ad.scale(d, -1.7)), [d]))
    col = P(4, 1)
    cases.append(("scale_rows", lambda: probe(ad.scale_rows(d, col)), [d, col]))
    m = P(4, 3, margin=True)
    cases.append(("relu", lambda: probe(ad.relu(m)), [m]))
    cases.append(("exp", lambda: probe(ad.exp(d)), [d]))
    pos = P(4, 3, positive=True)
    cases.append(("log", lambda: probe(ad.log(pos, floor=1e-12)), [pos]))
    cases.append(("power", lambda: probe(ad.power(pos, -0.5)), [pos]))
    cases.append(("square", lambda: probe(ad.square(d)), [d]))
    cases.append(("softplus", lambda: probe(ad.softplus(d)), [d]))
    cases.append(("log_softmax", lambda: probe(ad.log_softmax(d)), [d]))
    cases.append(("softmax", lambda: probe(ad.softmax(d)), [d]))
    w = rng.uniform(0.1, 2.0, 4)
    cases.append(("weighted_abs_sum", lambda: ad.weighted_abs_sum(m, w), [m]))
    cases.append(("sum_all", lambda: ad.sum_all(ad.square(d)), [d]))
    K = rng.standard_normal((4, 3))
    cases.append(("inner", lambda: ad.inner(ad.square(d), K), [d]))
    idx = np.array([0, 2, 2, 3, 1, 0])
    cases.append(("gather_rows", lambda: probe(ad.gather_rows(d, idx)), [d]))
    cases.append(("dropout", lambda: probe(ad.dropout(d, 0.5, np.random.default_rng(11))), [d]))
    return cases


def _objective_instance(rng, kind):
    """Small GCN instance whose hidden pre-activations and flows sit away from kinks."""
    g = random_connected_graph(rng, 8, min_nodes=6)
    n = g.num_nodes
    C = 3
    X = rng.standard_normal((n, 4))
    spec = ModelSpec("gcn", hidden=5, dropout=0.0, task="classification" if kind == "entropy" else "regression")
    adj = normalize_adjacency(g)
    for _ in range(100):
        model = build_model(spec, 4, C, rng)
        for p in model.params:
            p.value += 0.1 * rng.standard_normal(p.shape)
        W1, b1 = model.params[0].value, model.params[1].value
        pre = adj.matrix @ (X @ W1) + b1
        if np.abs(pre).min() > 1e-3:
            break
    train = np.sort(rng.choice(n, 4, replace=False))
    mask = NodeMask(train, n)
    if kind == "entropy":
        Y = np.eye(C)[rng.integers(0, C, train.size)]
    else:
        Y = rng.standard_normal((train.size, C))
    F = ad.parameter(0.05 * _away_from_zero(rng, (g.num_edges, C), margin=0.2))
    Z = rng.standard_normal((train.size, C))
    return g, X, adj, model, mask, Y, F, Z


def objective_cases(rng):
    cases = []
    for kind in BREGMAN_KINDS:
        g, X, adj, model, mask, Y, F, Z = _objective_instance(rng, kind)
        op = incidence(g, mask)
        lam = 3.0

        def gL(model=model, X=X, adj=adj, mask=mask):
            return ad.gather_rows(model.forward(X, adj, None), mask.members)

        theta = list(model.params)
        cases.append((f"traditional loss [{kind}]",
                      lambda kind=kind, gL=gL, Y=Y: traditional_loss(kind, gL(), Y), theta))
        cases.append((f"relaxed objective [{kind}]",
                      lambda kind=kind, gL=gL, Y=Y, g=g, mask=mask, F=F, op=op:
                      relaxed_objective(g, mask, gL(), F, Y, kind, lam, op=op), theta + [F]))
        cases.append((f"ADMM objective [{kind}]",
                      lambda kind=kind, gL=gL, Y=Y, g=g, mask=mask, F=F, Z=Z, op=op:
                      admm_objective(g, mask, gL(), F, Z, Y, kind, lam, op=op), theta + [F]))
    return cases


def check_gradients(seed=4) -> CheckResult:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    errors = {}
    for name, build, params in kernel_cases(rng) + objective_cases(rng):
        errors[name] = gradient_error(build, params)
    worst_name = max(errors, key=errors.get)
    worst = errors[worst_name]
    bad = [k for k, v in errors.items() if not v < GRAD_TOL]
    detail = f"{len(errors)} cases, worst {worst:.2e} ({worst_name})"
    if bad:
        detail += f"; failing: {', '.join(bad)}"
    return CheckResult("gradient fidelity", not bad, detail, time.perf_counter() - t0, worst)


def check_reduction(instances=50, seed=5) -> CheckResult:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    fails = []
    for k in range(instances):
        for kind in BREGMAN_KINDS:
            g = random_connected_graph(rng, 10, min_nodes=4)
            n = g.num_nodes
            C = int(rng.integers(2, 5))
            task = "classification" if kind == "entropy" else "regression"
            model = build_model(ModelSpec("gcn", hidden=8, task=task), 3, C, rng)
            X = rng.standard_normal((n, 3))
            train = np.sort(rng.choice(n, int(rng.integers(1, n + 1)), replace=False))
            if kind == "entropy":
                Y = np.eye(C)[rng.integers(0, C, train.size)]
            else:
                Y = rng.standard_normal((train.size, C))
            lam = float(10.0 ** rng.uniform(-2, 3))
            with ad.no_grad():
                gL = ad.gather_rows(model.forward(X, normalize_adjacency(g), None), train)
                relaxed = relaxed_objective(g, NodeMask(train, n), gL, np.zeros((g.num_edges, C)), Y, kind, lam).item()
                base = traditional_loss(kind, gL, Y).item()
            if relaxed != lam * base:
                fails.append((k, kind, relaxed, lam * base))
    detail = f"{instances} draws x {len(BREGMAN_KINDS)} kinds"
    if fails:
        detail += f"; {len(fails)} mismatches, first {fails[0]}"
    return CheckResult("reduction identity", not fails, detail, time.perf_counter() - t0)


CHECKS = (
    check_metric_axioms,
    check_monotone_masks,
    check_oracle,
    check_shift,
    check_gradients,
    check_reduction,
)


def run_all(seed=0):
    out = []
    for i, fn in enumerate(CHECKS):
        out.append(fn(seed=seed + i))
    return out
