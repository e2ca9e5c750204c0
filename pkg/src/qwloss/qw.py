"""QW label-transport loss: objectives, the two solvers and the edge-weight predictor.

Notation used in code: ``g_L`` is the model output on the labeled rows,
``S_L`` the incidence operator restricted to labeled rows, ``F`` the |E| x C
label-transport matrix, ``Z`` the |V_L| x C dual matrix.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Dataset
from .graph import Graph, IncidenceOperator, as_mask, incidence
from .models import Model, normalize_adjacency
from .ot import partial_w1_flow

logger = logging.getLogger(__name__)

ENTROPY = "entropy"
LEAST_SQUARES = "lsq"
BREGMAN_KINDS = (ENTROPY, LEAST_SQUARES)
LOG_FLOOR = 1e-12
WEIGHT_FLOOR = 1e-4


class SolverDivergedError(FloatingPointError):
    pass


def default_bregman(task: str) -> str:
    return ENTROPY if task == "classification" else LEAST_SQUARES


def _operator(graph: Graph, mask, op: IncidenceOperator | None) -> IncidenceOperator:
    if op is not None:
        return op
    if isinstance(mask, IncidenceOperator):
        return mask
    return incidence(graph, mask)


def _value(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


# -- objectives ---------------------------------------------------------------

def qw_loss_value(graph: Graph, mask, F) -> float:
    """sum_e sum_c w_e |F[e, c]|, the flow cost minimized inside the QW loss."""
    Fv = _value(F)
    if Fv.shape[0] != graph.num_edges:
        raise ValueError(f"F needs {graph.num_edges} rows, got {Fv.shape[0]}")
    return float(np.sum(graph.weights[:, None] * np.abs(Fv)))


def exact_qw_loss(graph: Graph, mask, estimates, targets) -> tuple[float, np.ndarray]:
    """QW(estimates, targets) by exact partial-W1 flows, one per label column.

    Returns the loss and the optimal |E| x C transport.
    """
    mask = as_mask(mask, graph.num_nodes)
    est = np.asarray(estimates, dtype=np.float64)
    tgt = np.asarray(targets, dtype=np.float64)
    if est.shape != tgt.shape or est.shape[0] != len(mask):
        raise ValueError("estimates and targets must be |mask| x C")
    F = np.zeros((graph.num_edges, est.shape[1]))
    total = 0.0
    for c in range(est.shape[1]):
        res = partial_w1_flow(graph, mask, est[:, c], tgt[:, c])
        F[:, c] = res.flow
        total += res.cost
    return total, F


def bregman_term(kind: str, combined: Tensor, targets) -> Tensor:
    """Mean over labeled rows of the per-node Bregman divergence.

    ``lsq``: 0.5 * ||combined - Y||^2 / |V_L|.
    ``entropy``: cross-entropy -sum Y log(max(combined, 1e-12)) / |V_L|.
    """
    combined = ad._wrap(combined)
    Y = np.asarray(targets, dtype=np.float64)
    if Y.shape != combined.shape:
        raise ValueError(f"bregman_term: prediction {combined.shape} vs targets {Y.shape}")
    if not np.all(np.isfinite(combined.value)):
        raise ad.NonFiniteError("non-finite prediction")
    n = max(Y.shape[0], 1)
    if kind == LEAST_SQUARES:
        return ad.scale(ad.sum_all(ad.square(ad.sub(combined, ad.constant(Y)))), 0.5 / n)
    if kind == ENTROPY:
        return ad.scale(ad.inner(ad.log(combined, floor=LOG_FLOOR), Y), -1.0 / n)
    raise ValueError(f"unknown Bregman kind {kind!r}")


def traditional_loss(kind: str, g_L: Tensor, targets) -> Tensor:
    """The per-node loss averaged over labeled nodes (cross-entropy or least squares)."""
    return bregman_term(kind, g_L, targets)


def combined_prediction(op: IncidenceOperator, g_rows: Tensor, F) -> Tensor:
    F = ad._wrap(F)
    return ad.add(g_rows, ad.spmm(op.matrix, F))


def relaxed_objective(graph, mask, g_L, F, targets, kind, lam, op=None) -> Tensor:
    """||diag(w) F||_1 + lam * B(g_L + S_L F, Y_L)."""
    op = _operator(graph, mask, op)
    F = ad._wrap(F)
    flow_cost = ad.weighted_abs_sum(F, graph.weights)
    fit = bregman_term(kind, combined_prediction(op, g_L, F), targets)
    return ad.add(flow_cost, ad.scale(fit, lam))


def admm_objective(graph, mask, g_L, F, Z, targets, kind, lam, op=None) -> Tensor:
    """Augmented Lagrangian of the QW problem.

    flow cost + <Z, g_L + S_L F - Y_L> / |V_L| + lam * B(g_L + S_L F, Y_L).
    The pairing carries the same 1/|V_L| as the Bregman term, so the dual
    step ``Z + lam * residual`` matches the penalty weight.
    """
    op = _operator(graph, mask, op)
    F = ad._wrap(F)
    Zv = _value(Z)
    flow_cost = ad.weighted_abs_sum(F, graph.weights)
    combined = combined_prediction(op, g_L, F)
    n = max(Zv.shape[0], 1)
    pairing = ad.scale(ad.inner(ad.sub(combined, ad.constant(targets)), Zv), 1.0 / n)
    fit = bregman_term(kind, combined, targets)
    return ad.add(ad.add(flow_cost, pairing), ad.scale(fit, lam))


def primal_residual(op: IncidenceOperator, g_L, F, targets) -> np.ndarray:
    return _value(g_L) + op.apply(_value(F)) - np.asarray(targets, dtype=np.float64)


def dual_update(Z, g_L, F, targets, lam, op: IncidenceOperator) -> np.ndarray:
    """Z + lam * (g_L + S_L F - Y_L)."""
    return _value(Z) + lam * primal_residual(op, g_L, F, targets)


def project_nonneg(F):
    """Elementwise max(F, 0).  Tensors are projected in place and returned."""
    if isinstance(F, Tensor):
        np.maximum(F.value, 0.0, out=F.value)
        return F
    return np.maximum(np.asarray(F, dtype=np.float64), 0.0)


# -- edge-weight predictor ----------------------------------------------------

class EdgePredictor:
    """Per-edge perceptron: flow row (C values) -> positive edge weight."""

    def __init__(self, num_labels: int, hidden: int = 16, rng=None):
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        r1 = np.sqrt(6.0 / (num_labels + hidden))
        r2 = np.sqrt(6.0 / (hidden + 1))
        self.params = [
            ad.parameter(rng.uniform(-r1, r1, size=(num_labels, hidden))),
            ad.parameter(np.zeros((1, hidden))),
            ad.parameter(rng.uniform(-r2, r2, size=(hidden, 1))),
            # softplus(0.5413) = 1, so an untrained predictor starts near the unit weights
            ad.parameter(np.full((1, 1), 0.5413248546129181)),
        ]

    def state(self):
        return [p.value.copy() for p in self.params]

    def load_state(self, values):
        for p, v in zip(self.params, values):
            p.value = np.array(v, dtype=np.float64, copy=True)


def predict_edge_weights(F, xi: EdgePredictor) -> Tensor:
    """softplus(MLP(F row)) + 1e-4 for every edge, as a |E| x 1 tensor."""
    F = ad._wrap(F)
    W1, b1, W2, b2 = xi.params
    h = ad.relu(ad.add(ad.matmul(F, W1), b1))
    raw = ad.add(ad.matmul(h, W2), b2)
    return ad.add(ad.softplus(raw), ad.constant(np.full((F.shape[0], 1), WEIGHT_FLOOR)))


# -- solvers -----------------------------------------------------------------

@dataclass
class QWConfig:
    lam: float = 10.0
    inner_steps: int = 1
    epochs: int = 500
    lr: float = 0.01
    weight_decay: float = 5e-4
    lr_flow: float = 0.01
    weight_decay_flow: float = 0.0
    lr_edge: float | None = None
    lr_decay: float = 1.0
    flow_init: str = "zeros"
    flow_init_scale: float = 0.01
    tol: float = 1e-4
    rel_tol: float = 1e-6
    patience: int = 200
    edge_weights: bool = False
    edge_hidden: int = 16
    bregman: str | None = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.inner_steps < 1:
            raise ValueError("inner_steps (J) must be at least 1")
        if self.flow_init not in ("zeros", "gaussian"):
            raise ValueError(f"unknown flow_init {self.flow_init!r}")
        if self.bregman is not None and self.bregman not in BREGMAN_KINDS:
            raise ValueError(f"unknown Bregman kind {self.bregman!r}")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class SolverResult:
    method: str
    model: Model
    F: np.ndarray | None
    Z: np.ndarray | None = None
    edge_state: list | None = None
    history: dict = field(default_factory=dict)
    best_epoch: int = 0
    epochs_run: int = 0
    primal_residual: float = float("nan")
    stop_reason: str = ""
    seconds: float = 0.0


class _Run:
    """State shared by the three training loops."""

    def __init__(self, model: Model, data: Dataset, cfg: QWConfig, seed, with_flow: bool):
        self.model, self.data, self.cfg = model, data, cfg
        g = data.graph
        self.graph = g
        self.kind = cfg.bregman or default_bregman(data.task)
        self.train_idx = data.train.members
        if self.train_idx.size == 0:
            raise ValueError("the labeled (train) mask is empty")
        self.val_idx = data.val.members
        self.Y_L = data.labels[self.train_idx]
        self.op_L = incidence(g, data.train)
        self.op_V = incidence(g, None)
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        drop_seq, flow_seq, edge_seq = ss.spawn(3)
        self.drop_rng = np.random.default_rng(drop_seq)
        self.fixed_adj = None if cfg.edge_weights else normalize_adjacency(g, g.weights)

        self.F = None
        self.xi = None
        self.opt_theta = ad.Adam(model.params, lr=cfg.lr, weight_decay=cfg.weight_decay)
        self.opt_flow = None
        self.opt_edge = None
        if with_flow:
            shape = (g.num_edges, data.num_classes)
            if cfg.flow_init == "zeros":
                F0 = np.zeros(shape)
            else:
                F0 = cfg.flow_init_scale * np.random.default_rng(flow_seq).standard_normal(shape)
                if g.directed:
                    F0 = np.abs(F0)
            self.F = ad.parameter(F0)
            self.opt_flow = ad.Adam([self.F], lr=cfg.lr_flow, weight_decay=cfg.weight_decay_flow)
            if cfg.edge_weights:
                self.xi = EdgePredictor(data.num_classes, cfg.edge_hidden, np.random.default_rng(edge_seq))
                lr_edge = cfg.lr_edge if cfg.lr_edge is not None else cfg.lr_flow
                self.opt_edge = ad.Adam(self.xi.params, lr=lr_edge, weight_decay=cfg.weight_decay_flow)
        elif cfg.edge_weights:
            raise ValueError("edge-weight prediction needs a QW solver (there is no flow to condition on)")

        self.history = {k: [] for k in ("objective", "fit", "residual", "val_score", "flow_l1", "flow_min")}
        self.best_score = None
        self.best = None
        self.best_epoch = 0
        self.since_best = 0
        self.t0 = time.perf_counter()

    def adjacency(self, F):
        if self.fixed_adj is not None:
            return self.fixed_adj
        return normalize_adjacency(self.graph, predict_edge_weights(F, self.xi))

    def forward(self, F, train: bool) -> Tensor:
        X = self.data.features
        return self.model.forward(X, self.adjacency(F), self.drop_rng if train else None)

    def eval_output(self) -> np.ndarray:
        with ad.no_grad():
            F = None if self.F is None else ad.constant(self.F.value)
            return self.forward(F, train=False).value

    def score(self, pred: np.ndarray):
        if self.val_idx.size == 0:
            return None
        p = pred[self.val_idx]
        Y = self.data.labels[self.val_idx]
        mse = float(np.mean((p - Y) ** 2))
        if self.data.task == "classification":
            acc = float(np.mean(np.argmax(p, axis=1) == self.data.classes[self.val_idx]))
            return (acc, -mse)
        return (-mse,)

    def decay(self):
        if self.cfg.lr_decay != 1.0:
            for opt in (self.opt_theta, self.opt_flow, self.opt_edge):
                if opt is not None:
                    opt.state.lr *= self.cfg.lr_decay

    def snapshot(self, Z):
        return (
            self.model.state(),
            None if self.F is None else self.F.value.copy(),
            None if Z is None else np.array(Z, copy=True),
            None if self.xi is None else self.xi.state(),
        )

    def track(self, epoch, g_eval, Z) -> bool:
        """Record the epoch; returns True when patience is exhausted."""
        pred = g_eval if self.F is None else g_eval + self.op_V.apply(self.F.value)
        s = self.score(pred)
        self.history["val_score"].append(None if s is None else s[0])
        if self.F is not None:
            self.history["flow_l1"].append(float(np.abs(self.F.value).sum()))
            self.history["flow_min"].append(float(self.F.value.min(initial=0.0)))
        if s is None or self.cfg.patience <= 0:
            self.best = None
            self.best_epoch = epoch
            return False
        if self.best_score is None or s > self.best_score:
            self.best_score, self.best, self.best_epoch, self.since_best = s, self.snapshot(Z), epoch, 0
            return False
        self.since_best += 1
        return self.since_best >= self.cfg.patience

    def finish(self, method, epochs_run, Z, residual, reason) -> SolverResult:
        if self.best is not None:
            theta, F, Zb, xi = self.best
            self.model.load_state(theta)
            if F is not None:
                self.F.value = F
            if xi is not None:
                self.xi.load_state(xi)
            Z = Zb
        Fv = None if self.F is None else self.F.value.copy()
        if Fv is not None:
            with ad.no_grad():
                gL = self.eval_output()[self.train_idx]
            residual = float(np.abs(primal_residual(self.op_L, gL, Fv, self.Y_L)).max())
        return SolverResult(
            method=method,
            model=self.model,
            F=Fv,
            Z=None if Z is None else np.asarray(Z),
            edge_state=None if self.xi is None else self.xi.state(),
            history=self.history,
            best_epoch=self.best_epoch,
            epochs_run=epochs_run,
            primal_residual=residual,
            stop_reason=reason,
            seconds=time.perf_counter() - self.t0,
        )


def _guard(fn, method, epoch):
    try:
        return fn()
    except ad.NonFiniteError as exc:
        raise SolverDivergedError(f"{method}: non-finite values at epoch {epoch}: {exc}") from exc


def solve_traditional(model: Model, data: Dataset, cfg: QWConfig, seed=0) -> SolverResult:
    """Baseline: minimize the mean per-node loss over theta only."""
    run = _Run(model, data, cfg, seed, with_flow=False)
    reason = "max_epochs"
    epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        def step():
            g = run.forward(None, train=True)
            loss = traditional_loss(run.kind, ad.gather_rows(g, run.train_idx), run.Y_L)
            run.opt_theta.zero_grad()
            loss.backward()
            run.opt_theta.step()
            return loss.item()

        run.history["objective"].append(_guard(step, "traditional", epoch))
        g_eval = run.eval_output()
        run.history["fit"].append(traditional_loss(run.kind, ad.constant(g_eval[run.train_idx]), run.Y_L).item())
        run.decay()
        if run.track(epoch, g_eval, None):
            reason = "early_stop"
            break
    return run.finish("traditional", epoch, None, float("nan"), reason)


def solve_algorithm1(model: Model, data: Dataset, cfg: QWConfig, seed=0) -> SolverResult:
    """Joint Adam on the relaxed objective over (theta, F[, xi]); F >= 0 on directed graphs."""
    run = _Run(model, data, cfg, seed, with_flow=True)
    g_graph = run.graph
    reason = "max_epochs"
    epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        def step():
            g = run.forward(run.F, train=True)
            obj = relaxed_objective(
                g_graph, None, ad.gather_rows(g, run.train_idx), run.F, run.Y_L, run.kind, cfg.lam, op=run.op_L
            )
            run.opt_theta.zero_grad()
            run.opt_flow.zero_grad()
            if run.opt_edge:
                run.opt_edge.zero_grad()
            obj.backward()
            run.opt_theta.step()
            run.opt_flow.step()
            if run.opt_edge:
                run.opt_edge.step()
            if g_graph.directed:
                project_nonneg(run.F)
            return obj.item()

        run.history["objective"].append(_guard(step, "algorithm1", epoch))
        g_eval = run.eval_output()
        gL = g_eval[run.train_idx]
        res = primal_residual(run.op_L, gL, run.F.value, run.Y_L)
        run.history["residual"].append(float(np.abs(res).max()))
        run.history["fit"].append(
            bregman_term(run.kind, ad.constant(gL + run.op_L.apply(run.F.value)), run.Y_L).item()
        )
        run.decay()
        if run.track(epoch, g_eval, None):
            reason = "early_stop"
            break
    return run.finish("algorithm1", epoch, None, run.history["residual"][-1], reason)


def solve_algorithm2(model: Model, data: Dataset, cfg: QWConfig, seed=0) -> SolverResult:
    """Bregman ADMM: J Adam steps on theta, J on F, projection, closed-form dual step."""
    run = _Run(model, data, cfg, seed, with_flow=True)
    g_graph = run.graph
    J = cfg.inner_steps
    Z = np.zeros((run.train_idx.size, data.num_classes))
    reason = "max_epochs"
    prev_obj = None
    residual = float("inf")
    epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        def theta_steps():
            F_const = ad.constant(run.F.value)
            for _ in range(J):
                g = run.forward(F_const, train=True)
                obj = admm_objective(
                    g_graph, None, ad.gather_rows(g, run.train_idx), F_const, Z, run.Y_L, run.kind, cfg.lam,
                    op=run.op_L,
                )
                run.opt_theta.zero_grad()
                if run.opt_edge:
                    run.opt_edge.zero_grad()
                obj.backward()
                run.opt_theta.step()
                if run.opt_edge:
                    run.opt_edge.step()

        def flow_steps():
            # without edge prediction g does not depend on F: one eval pass serves the whole epoch
            g_fixed = gL_fixed = None
            if run.xi is None:
                g_fixed = run.eval_output()
                gL_fixed = ad.constant(g_fixed[run.train_idx])
            for _ in range(J):
                if gL_fixed is None:
                    gL = ad.gather_rows(run.forward(run.F, train=False), run.train_idx)
                else:
                    gL = gL_fixed
                obj = admm_objective(g_graph, None, gL, run.F, Z, run.Y_L, run.kind, cfg.lam, op=run.op_L)
                run.opt_flow.zero_grad()
                obj.backward()
                run.opt_flow.step()
            if g_graph.directed:
                project_nonneg(run.F)
            return g_fixed

        _guard(theta_steps, "algorithm2", epoch)
        g_eval = _guard(flow_steps, "algorithm2", epoch)
        if g_eval is None:
            g_eval = run.eval_output()
        gL = g_eval[run.train_idx]
        res = primal_residual(run.op_L, gL, run.F.value, run.Y_L)
        residual = float(np.abs(res).max())
        obj_val = admm_objective(
            g_graph, None, ad.constant(gL), ad.constant(run.F.value), Z, run.Y_L, run.kind, cfg.lam, op=run.op_L
        ).item()
        run.history["objective"].append(obj_val)
        run.history["residual"].append(residual)
        run.history["fit"].append(bregman_term(run.kind, ad.constant(gL + run.op_L.apply(run.F.value)), run.Y_L).item())
        Z = dual_update(Z, gL, run.F.value, run.Y_L, cfg.lam, run.op_L)
        run.decay()
        if run.track(epoch, g_eval, Z):
            reason = "early_stop"
            break
        if prev_obj is not None and residual < cfg.tol:
            if abs(obj_val - prev_obj) <= cfg.rel_tol * max(abs(prev_obj), 1e-12):
                reason = "converged"
                break
        prev_obj = obj_val
    return run.finish("algorithm2", epoch, Z, residual, reason)


SOLVERS = {
    "traditional": solve_traditional,
    "qw-alg1": solve_algorithm1,
    "qw-alg2": solve_algorithm2,
}
