"""Small reverse-mode autodiff over float64 matrices, plus Adam.

Every value is a 2-D array.  Scalars are 1x1.  Sparse operands (adjacency,
incidence) enter only as constants through :func:`spmm`.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np


class NonFiniteError(FloatingPointError):
    pass


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, value, requires_grad=False, _parents=(), _backward=None, op="leaf"):
        v = np.asarray(value, dtype=np.float64)
        if v.ndim == 0:
            v = v.reshape(1, 1)
        elif v.ndim == 1:
            v = v.reshape(-1, 1)
        elif v.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {v.shape}")
        self.value = v
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(v) if requires_grad else None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ValueError("item() needs a single-element tensor")
        return float(self.value[0, 0])

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into every leaf that requires grad.

        Nodes are visited once each in reverse topological order.
        """
        if seed is None:
            if self.value.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.value)
        order = topological_order(self)
        grads = {id(self): np.asarray(seed, dtype=np.float64).reshape(self.shape)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x)


def parameter(x) -> Tensor:
    return Tensor(np.array(x, dtype=np.float64, copy=True), requires_grad=True)


def _make(value, parents, backward, op) -> Tensor:
    if not np.isfinite(value).all():
        raise NonFiniteError(f"non-finite value produced by {op}")
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(value, op=op)
    return Tensor(value, True, tuple(parents), backward, op)


def _check_same(a: Tensor, b: Tensor, op):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- kernels -----------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    av, bv = a.value, b.value

    def backward(g):
        return (g @ bv.T if a.requires_grad else None, av.T @ g if b.requires_grad else None)

    return _make(av @ bv, (a, b), backward, "matmul")


def spmm(S, a: Tensor) -> Tensor:
    """Constant sparse (or dense ndarray) matrix times a tensor."""
    a = _wrap(a)
    if S.shape[1] != a.shape[0]:
        raise ValueError(f"spmm: shape mismatch {S.shape} @ {a.shape}")
    out = S @ a.value

    def backward(g):
        return (np.asarray(S.T @ g),)

    return _make(np.asarray(out), (a,), backward, "spmm")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a 1 x k row broadcast over the rows of ``a``."""
    a, b = _wrap(a), _wrap(b)
    row_bias = b.shape[0] == 1 and a.shape[0] != 1 and b.shape[1] == a.shape[1]
    if not row_bias:
        _check_same(a, b, "add")

    def backward(g):
        return (g, g.sum(axis=0, keepdims=True) if row_bias else g)

    return _make(a.value + b.value, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_same(a, b, "sub")
    return _make(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_same(a, b, "mul")
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    a = _wrap(a)
    c = float(c)
    return _make(a.value * c, (a,), lambda g: (g * c,), "scale")


def scale_rows(a: Tensor, col: Tensor) -> Tensor:
    """Multiply row i of ``a`` by ``col[i, 0]``."""
    a, col = _wrap(a), _wrap(col)
    if col.shape != (a.shape[0], 1):
        raise ValueError(f"scale_rows: need a {a.shape[0]}x1 column, got {col.shape}")
    av, cv = a.value, col.value

    def backward(g):
        return (g * cv, (g * av).sum(axis=1, keepdims=True))

    return _make(av * cv, (a, col), backward, "scale_rows")


def relu(a: Tensor) -> Tensor:
    a = _wrap(a)
    pos = a.value > 0
    return _make(np.where(pos, a.value, 0.0), (a,), lambda g: (g * pos,), "relu")


def exp(a: Tensor) -> Tensor:
    a = _wrap(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.value)  # overflow surfaces as NonFiniteError below
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(a, floor)``; zero gradient where the floor is active."""
    a = _wrap(a)
    clipped = a.value < floor if floor > 0 else np.zeros(a.shape, dtype=bool)
    x = np.where(clipped, floor, a.value)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x)
        inv = np.where(clipped, 0.0, 1.0 / x)
    return _make(out, (a,), lambda g: (g * inv,), "log")


def power(a: Tensor, p: float) -> Tensor:
    a = _wrap(a)
    out = a.value ** p
    return _make(out, (a,), lambda g: (g * p * a.value ** (p - 1),), "power")


def square(a: Tensor) -> Tensor:
    a = _wrap(a)
    av = a.value
    return _make(av * av, (a,), lambda g: (2.0 * g * av,), "square")


def softplus(a: Tensor) -> Tensor:
    a = _wrap(a)
    av = a.value
    out = np.logaddexp(0.0, av)
    sig = 0.5 * (1.0 + np.tanh(0.5 * av))
    return _make(out, (a,), lambda g: (g * sig,), "softplus")


def log_softmax(a: Tensor) -> Tensor:
    """Row-wise log-softmax with max subtraction."""
    a = _wrap(a)
    z = a.value - a.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _make(out, (a,), lambda g: (g - p * g.sum(axis=1, keepdims=True),), "log_softmax")


def softmax(a: Tensor) -> Tensor:
    a = _wrap(a)
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return _make(p, (a,), lambda g: (p * (g - (g * p).sum(axis=1, keepdims=True)),), "softmax")


def weighted_abs_sum(a: Tensor, row_weights) -> Tensor:
    """sum_i w_i * sum_j |a_ij|; subgradient uses sign(0) = 0."""
    a = _wrap(a)
    w = np.asarray(row_weights, dtype=np.float64).reshape(-1, 1)
    if w.shape[0] != a.shape[0]:
        raise ValueError(f"weighted_abs_sum: {w.shape[0]} weights for {a.shape[0]} rows")
    av = a.value
    out = np.array([[np.sum(w * np.abs(av))]])
    return _make(out, (a,), lambda g: (g[0, 0] * w * np.sign(av),), "weighted_abs_sum")


def sum_all(a: Tensor) -> Tensor:
    a = _wrap(a)
    shape = a.shape
    return _make(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),), "sum")


def inner(a: Tensor, c) -> Tensor:
    """<a, c> for a constant matrix ``c``."""
    a = _wrap(a)
    cv = c.value if isinstance(c, Tensor) else np.asarray(c, dtype=np.float64)
    if cv.shape != a.shape:
        raise ValueError(f"inner: shape mismatch {a.shape} vs {cv.shape}")
    return _make(np.array([[np.sum(a.value * cv)]]), (a,), lambda g: (g[0, 0] * cv,), "inner")


def gather_rows(a: Tensor, idx) -> Tensor:
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.int64)
    n = a.shape[0]

    def backward(g):
        out = np.zeros((n, g.shape[1]))
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.value[idx], (a,), backward, "gather_rows")


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is 0."""
    a = _wrap(a)
    if rng is None or rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _make(a.value * keep, (a,), lambda g: (g * keep,), "dropout")


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update of ``params`` (in place); returns ``params``.

    ``weight_decay`` is added to the gradient as an L2 term.
    """
    if not state.m:
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
    if len(state.m) != len(params):
        raise ValueError("Adam state was built for a different parameter list")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p.value
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.value -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


class Adam:
    def __init__(self, params, lr=1e-3, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state)
