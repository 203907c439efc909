"""Small reverse-mode differentiation kernel over float64 numpy arrays.

Operations executed while a :class:`Tape` is active (``with Tape() as tape``)
are recorded in execution order; ``tape.backward(loss)`` walks that record
in reverse and accumulates exact gradients into every tensor that requires
them.  Outside a tape the same functions simply compute values, which is
what evaluation code relies on.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Iterable, Sequence

import numba
import numpy as np
import scipy.sparse as sp

PROB_FLOOR = 1e-12


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def numpy(self) -> np.ndarray:
        return self.value

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.value.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match tensor {self.value.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of primitive operations for one backward pass."""

    _active: list["Tape"] = []

    def __init__(self):
        self.ops: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        Tape._active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._active.pop()

    @classmethod
    def current(cls) -> "Tape | None":
        return cls._active[-1] if cls._active else None

    def backward(self, loss: Tensor) -> None:
        if loss.value.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.value)
        for out, parents, rule in reversed(self.ops):
            if out.grad is None:
                continue
            grads = rule(out.grad)
            for parent, g in zip(parents, grads):
                if g is not None and parent.requires_grad:
                    parent._accumulate(g)
        # intermediates hold no useful state once the pass is over
        for out, _, _ in self.ops:
            out.grad = None
        self.ops.clear()


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(value: np.ndarray, parents: Sequence[Tensor], rule: Callable) -> Tensor:
    out = Tensor(value)
    tape = Tape.current()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.ops.append((out, tuple(parents), rule))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- primitives


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        value = a.value + b.value
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from None

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(value, (a, b), rule)


def sum_all(items: Iterable[Tensor]) -> Tensor:
    items = list(items)
    out = items[0]
    for item in items[1:]:
        out = add(out, item)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    return _record(a.value * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    value = a.value @ b.value

    def rule(g):
        ga = gb = None
        if a.requires_grad:
            ga = np.outer(g, b.value) if b.value.ndim == 1 else g @ b.value.T
        if b.requires_grad:
            gb = a.value.T @ g
        return ga, gb

    return _record(value, (a, b), rule)


def row_softmax(x: Tensor) -> Tensor:
    if x.value.ndim != 2:
        raise ShapeError(f"row_softmax: expected a matrix, got shape {x.shape}")
    z = x.value - x.value.max(axis=1, keepdims=True) if x.value.size else x.value
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True) if x.value.size else e

    def rule(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _record(y, (x,), rule)


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return _record(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0
    return _record(x.value * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.05) -> Tensor:
    factor = np.where(x.value > 0, 1.0, slope)
    return _record(x.value * factor, (x,), lambda g: (g * factor,))


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is 0."""
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _record(x.value * keep, (x,), lambda g: (g * keep,))


def gather_rows(x: Tensor, index) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for shape {x.shape}")
    value = x.value[index]

    def rule(g):
        if x.value.ndim == 1:
            return (np.bincount(index, weights=g, minlength=x.shape[0]),)
        scatter = sp.csr_matrix((np.ones(index.size), (index, np.arange(index.size))),
                                shape=(x.shape[0], index.size))
        return (np.asarray(scatter @ g.reshape(index.size, -1)).reshape(x.shape),)

    return _record(value, (x,), rule)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    widths = {p.shape[1:] for p in parts}
    if len(widths) != 1:
        raise ShapeError(f"concat_rows: trailing shapes differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])
    value = np.concatenate([p.value for p in parts], axis=0)

    def rule(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _record(value, tuple(parts), rule)


def stack_cols(parts: Sequence[Tensor]) -> Tensor:
    """Stack equal-length vectors as the columns of a matrix."""
    if len({p.shape for p in parts}) != 1 or parts[0].value.ndim != 1:
        raise ShapeError(f"stack_cols: expected equal vectors, got {[p.shape for p in parts]}")
    value = np.stack([p.value for p in parts], axis=1)
    return _record(value, tuple(parts), lambda g: tuple(g[:, j] for j in range(len(parts))))


def row_scale(x: Tensor, s) -> Tensor:
    """Multiply row i of ``x`` by ``s[i]``."""
    s = _as_tensor(s)
    if s.value.ndim != 1 or s.shape[0] != x.shape[0]:
        raise ShapeError(f"row_scale: scale {s.shape} does not match rows of {x.shape}")
    col = s.value.reshape((-1,) + (1,) * (x.value.ndim - 1))
    value = x.value * col

    def rule(g):
        gs = (g * x.value).reshape(x.shape[0], -1).sum(axis=1)
        return g * col, gs

    return _record(value, (x, s), rule)


def where_rows(mask, a: Tensor, b) -> Tensor:
    """Row i from ``a`` where ``mask[i]`` else from ``b``."""
    b = _as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    if a.shape != b.shape or mask.shape != (a.shape[0],):
        raise ShapeError(f"where_rows: shapes {a.shape}, {b.shape}, mask {mask.shape}")
    m = mask[:, None]
    value = np.where(m, a.value, b.value)
    return _record(value, (a, b), lambda g: (g * m, g * ~m))


def blend(gate: Tensor, a: Tensor, b: Tensor) -> Tensor:
    """Row-wise ``gate * a + (1 - gate) * b`` with a per-row gate vector."""
    if a.shape != b.shape or gate.shape != (a.shape[0],):
        raise ShapeError(f"blend: gate {gate.shape}, inputs {a.shape} and {b.shape}")
    w = gate.value[:, None]
    value = w * a.value + (1.0 - w) * b.value

    def rule(g):
        return (g * (a.value - b.value)).sum(axis=1), g * w, g * (1.0 - w)

    return _record(value, (gate, a, b), rule)


def convex_combine(weights: Tensor, mats: Sequence[Tensor]) -> Tensor:
    """``out[v] = sum_j weights[v, j] * mats[j][v]``."""
    n, k = weights.shape
    if k != len(mats) or any(m.shape[0] != n or m.shape != mats[0].shape for m in mats):
        raise ShapeError(
            f"convex_combine: weights {weights.shape} vs inputs {[m.shape for m in mats]}"
        )
    value = sum(weights.value[:, j, None] * m.value for j, m in enumerate(mats))

    def rule(g):
        gw = np.stack([(g * m.value).sum(axis=1) for m in mats], axis=1)
        return (gw,) + tuple(g * weights.value[:, j, None] for j in range(k))

    return _record(value, (weights, *mats), rule)


def _segment_ids(indptr: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))


@numba.njit(cache=True)
def _edge_dots(indptr, indices, g, x):
    # out[e] = <g[dst(e)], x[indices[e]]> without materializing gathered rows
    out = np.empty(indices.shape[0])
    for v in range(indptr.shape[0] - 1):
        for e in range(indptr[v], indptr[v + 1]):
            u = indices[e]
            acc = 0.0
            for c in range(g.shape[1]):
                acc += g[v, c] * x[u, c]
            out[e] = acc
    return out


def segment_softmax(logits: Tensor, indptr) -> Tensor:
    """Softmax of edge logits within each destination segment of a CSR layout."""
    indptr = np.asarray(indptr, dtype=np.int64)
    if logits.value.ndim != 1 or logits.shape[0] != indptr[-1]:
        raise ShapeError(f"segment_softmax: {logits.shape} logits for {indptr[-1]} edges")
    s = logits.value
    counts = np.diff(indptr)
    nonempty = counts > 0
    starts = indptr[:-1][nonempty]
    seg = np.repeat(np.arange(nonempty.sum()), counts[nonempty])
    if s.size == 0:
        return _record(s.copy(), (logits,), lambda g: (g,))
    e = np.exp(s - np.maximum.reduceat(s, starts)[seg])
    y = e / np.add.reduceat(e, starts)[seg]

    def rule(g):
        dot = np.add.reduceat(g * y, starts)[seg]
        return (y * (g - dot),)

    return _record(y, (logits,), rule)


def segment_weighted_sum(weights, x: Tensor, indptr, indices, n_out: int | None = None) -> Tensor:
    """``out[v] = sum_e weights[e] * x[indices[e]]`` over the edges e of segment v."""
    weights = _as_tensor(weights)
    indptr = np.asarray(indptr, dtype=np.int64)
    indices = np.asarray(indices, dtype=np.int64)
    n_out = len(indptr) - 1 if n_out is None else n_out
    if weights.shape != indices.shape or indptr[-1] != len(indices):
        raise ShapeError(
            f"segment_weighted_sum: weights {weights.shape}, {len(indices)} edges, indptr end {indptr[-1]}"
        )
    xv = x.value if x.value.ndim == 2 else x.value[:, None]
    mat = sp.csr_matrix((weights.value, indices, indptr), shape=(n_out, x.shape[0]))
    value = np.asarray(mat @ xv)
    if x.value.ndim == 1:
        value = value[:, 0]

    def rule(g):
        g2 = g if g.ndim == 2 else g[:, None]
        gx = gw = None
        if x.requires_grad:
            gx = np.asarray(mat.T @ g2)
            gx = gx if x.value.ndim == 2 else gx[:, 0]
        if weights.requires_grad:
            gw = _edge_dots(indptr, indices, np.ascontiguousarray(g2), np.ascontiguousarray(xv))
        return gw, gx

    return _record(value, (weights, x), rule)


# --------------------------------------------------------------- objectives


def _check_pair(op: str, p: Tensor, q: Tensor) -> None:
    if p.shape != q.shape or p.value.ndim != 2:
        raise ShapeError(f"{op}: shape mismatch {p.shape} vs {q.shape}")


def cross_entropy(pred: Tensor, labels) -> Tensor:
    """Mean of ``-log pred[i, labels[i]]`` with the probability floored at 1e-12."""
    labels = np.asarray(labels, dtype=np.int64)
    n = pred.shape[0]
    if n == 0:
        raise ValueError("cross_entropy over an empty row set")
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: {labels.shape} labels for {pred.shape} predictions")
    rows = np.arange(n)
    picked = pred.value[rows, labels]
    clamped = np.maximum(picked, PROB_FLOOR)
    value = np.array(-np.log(clamped).mean())

    def rule(g):
        out = np.zeros_like(pred.value)
        out[rows, labels] = np.where(picked > PROB_FLOOR, -1.0 / clamped, 0.0) * (g / n)
        return (out,)

    return _record(value, (pred,), rule)


def kl_divergence(p: Tensor, q: Tensor) -> Tensor:
    """Mean over rows of ``sum_c p_c (log p_c - log q_c)``; ``0 log 0 = 0``."""
    _check_pair("kl_divergence", p, q)
    n = p.shape[0]
    if n == 0:
        raise ValueError("kl_divergence over an empty row set")
    pv, qv = p.value, q.value
    q_c = np.maximum(qv, PROB_FLOOR)
    p_c = np.maximum(pv, PROB_FLOOR)
    positive = pv > 0
    terms = np.where(positive, pv * (np.log(p_c) - np.log(q_c)), 0.0)
    value = np.array(terms.sum() / n)

    def rule(g):
        c = g / n
        gp = c * (np.log(p_c) - np.log(q_c) + 1.0)
        gq = -c * np.where(qv > PROB_FLOOR, pv / q_c, 0.0)
        return gp, gq

    return _record(value, (p, q), rule)


def sq_euclidean(p: Tensor, q: Tensor) -> Tensor:
    """Mean over rows of the squared Euclidean distance."""
    _check_pair("sq_euclidean", p, q)
    n = p.shape[0]
    if n == 0:
        raise ValueError("sq_euclidean over an empty row set")
    diff = p.value - q.value
    value = np.array((diff * diff).sum() / n)

    def rule(g):
        gd = (2.0 * g / n) * diff
        return gd, -gd

    return _record(value, (p, q), rule)


# ------------------------------------------------------- parameters & Adam


class ParamStore(OrderedDict):
    """Name -> Tensor registry for one trainable component."""

    def add(self, name: str, value, **kw) -> Tensor:
        if name in self:
            raise KeyError(f"parameter {name!r} registered twice")
        t = Tensor(value, requires_grad=True, name=name)
        self[name] = t
        return t

    def zero_grad(self) -> None:
        for t in self.values():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self.items()}

    def load(self, values: dict[str, np.ndarray]) -> None:
        if set(values) != set(self):
            missing = set(self) ^ set(values)
            raise KeyError(f"parameter sets differ: {sorted(missing)}")
        for k, t in self.items():
            v = np.asarray(values[k], dtype=np.float64)
            if v.shape != t.shape:
                raise ShapeError(f"parameter {k!r}: shape {v.shape} != {t.shape}")
            t.value = v.copy()


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def xavier_normal_init(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    shape = tuple(int(s) for s in shape)
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        fan_in, fan_out = shape[0], shape[1]
    if fan_in + fan_out == 0 or 0 in shape:
        return np.zeros(shape)
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=shape)


class Adam:
    """Classic Adam with weight decay folded into the gradient as an L2 term."""

    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    def __init__(self, params: ParamStore, lr: float = 0.01, weight_decay: float = 0.0,
                 no_decay: Iterable[str] = ()):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.no_decay = set(no_decay)
        self.t = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = np.zeros_like(p.value) if p.grad is None else p.grad
            if self.weight_decay and k not in self.no_decay:
                g = g + self.weight_decay * p.value
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            p.value = p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
