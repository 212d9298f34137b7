"""Small dense reverse-mode autodiff engine on top of numpy.

Every differentiable op appends one entry to a thread-local tape when any of
its inputs requires a gradient.  ``backward`` walks the tape in reverse
recording order, which is a valid topological order by construction.
"""

from __future__ import annotations

import json
import threading
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


class Tape:
    """Ordered record of (output, parents, backward_fn) triples."""

    def __init__(self):
        self.entries: list[tuple[Tensor, tuple, Callable]] = []
        self.enabled = True

    def record(self, out, parents, fn):
        self.entries.append((out, parents, fn))

    def clear(self):
        self.entries.clear()

    def __len__(self):
        return len(self.entries)


_local = threading.local()


def get_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


@contextmanager
def no_grad():
    tape = get_tape()
    prev = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, k):
        return power(self, k)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], fn: Callable) -> Tensor:
    out = Tensor(data)
    tape = get_tape()
    if tape.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, tuple(parents), fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def fn(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), fn)


def power(a: Tensor, k: float) -> Tensor:
    return _make(a.data ** k, (a,), lambda g: (g * k * a.data ** (k - 1),))


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules (ndim >= 2 on both sides)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)

    def fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), fn)


# ------------------------------------------------------------- elementwise


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow-free for any finite x
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = a.data > 0
    scale = np.where(mask, 1.0, slope)
    return _make(a.data * scale, (a,), lambda g: (g * scale,))


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    x = a.data
    neg_part = alpha * np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg_part)
    dx = np.where(x > 0, 1.0, neg_part + alpha)
    return _make(out, (a,), lambda g: (g * dx,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def softmax(a: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is False get probability 0.

    A slice that is fully masked yields all zeros rather than NaN.
    """
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(mask, x.shape)
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    out = e / np.where(s > 0, s, 1.0)

    def fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), fn)


def graph_attention(s_self: Tensor, s_nbr: Tensor, log_w: Tensor, mask: np.ndarray, values: Tensor,
                    slope: float = 0.2) -> tuple[Tensor, np.ndarray]:
    """Fused multi-head additive attention over a dense neighbourhood mask.

    For head k: a[k, i, j] = softmax_j(leaky(s_self[k, i] + s_nbr[k, j]) + log_w[i, j])
    restricted to ``mask[i, j]``, and the output is a[k] @ values[k].
    Adding log_w inside the softmax is the same as multiplying the softmax
    weights by w and renormalizing.  Rows with an empty mask give zeros.

    Shapes: s_self, s_nbr (K, n); log_w, mask (n, n); values (K, n, d).
    Returns the output (K, n, d) and the attention array (K, n, n).
    """
    K, n = s_self.shape
    if s_nbr.shape != (K, n) or log_w.shape != (n, n) or values.shape[:2] != (K, n):
        raise ShapeError(f"graph_attention: s_self {s_self.shape}, s_nbr {s_nbr.shape}, "
                         f"log_w {log_w.shape}, values {values.shape}")
    mask = np.asarray(mask, dtype=bool)
    # work on the edge list: dense exp over masked-out entries dominates otherwise
    dst, src = np.nonzero(mask)
    rows, starts, seg = np.unique(dst, return_index=True, return_inverse=True)
    e = s_self.data[:, dst] + s_nbr.data[:, src]                   # (K, E)
    scale = np.where(e > 0, 1.0, slope)
    z = e * scale + log_w.data[dst, src]
    if e.shape[1]:
        z -= np.maximum.reduceat(z, starts, axis=1)[:, seg]
        np.exp(z, out=z)
        z /= np.add.reduceat(z, starts, axis=1)[:, seg]
    a_e = z
    att = np.zeros((K, n, n))
    att[:, dst, src] = a_e
    out = np.matmul(att, values.data)

    def fn(g):
        d_e = np.matmul(g, np.swapaxes(values.data, 1, 2))[:, dst, src]
        dvalues = np.matmul(np.swapaxes(att, 1, 2), g)
        ds_self = np.zeros((K, n))
        ds_nbr = np.zeros((K, n))
        dlog_w = np.zeros((n, n))
        if not d_e.shape[1]:
            return ds_self, ds_nbr, dlog_w, dvalues
        dz = a_e * (d_e - np.add.reduceat(d_e * a_e, starts, axis=1)[:, seg])
        dlog_w[dst, src] = dz.sum(axis=0)
        de = dz * scale
        ds_self[:, rows] = np.add.reduceat(de, starts, axis=1)
        flat = (np.arange(K)[:, None] * n + src[None, :]).ravel()
        ds_nbr = np.bincount(flat, weights=de.ravel(), minlength=K * n).reshape(K, n)
        return ds_self, ds_nbr, dlog_w, dvalues

    return _make(out, (s_self, s_nbr, log_w, values), fn), att


# ------------------------------------------------------------------ shapes


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(np.asarray(out), (a,), fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(out, (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, fn)


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(a: Tensor, idx) -> Tensor:
    """Basic or advanced indexing; advanced indices scatter with ``np.add.at``."""
    out = a.data[idx]
    basic = _is_basic(idx)

    def fn(g):
        full = np.zeros(a.shape, dtype=DTYPE)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out, dtype=DTYPE), (a,), fn)


def take_rows(a: Tensor, rows: np.ndarray) -> Tensor:
    """Gather rows along axis 0 (faster backward than generic getitem)."""
    rows = np.asarray(rows, dtype=np.intp)
    out = a.data[rows]

    def fn(g):
        full = np.zeros(a.shape, dtype=DTYPE)
        flat = g.reshape(len(rows), -1)
        np.add.at(full.reshape(a.shape[0], -1), rows, flat)
        return (full,)

    return _make(out, (a,), fn)


# --------------------------------------------------------------- recurrent


def lstm(x: Tensor, mask: np.ndarray, w_ih: Tensor, w_hh: Tensor, bias: Tensor,
         reverse: bool = False) -> Tensor:
    """One LSTM direction over a (B, W, D) batch, fused into a single tape entry.

    Gate order is input, forget, cell, output.  Where ``mask[b, t]`` is 0 the
    state is carried through unchanged, so left padding in the forward
    direction (or right padding in the reverse one) leaves the result exactly
    as if the sequence were shorter.  Output at masked steps is the carried
    state and should be ignored downstream.
    """
    B, W, D = x.shape
    H = w_hh.shape[0]
    if w_ih.shape != (D, 4 * H) or w_hh.shape != (H, 4 * H) or bias.shape != (4 * H,):
        raise ShapeError(f"lstm: x {x.shape}, w_ih {w_ih.shape}, w_hh {w_hh.shape}, bias {bias.shape}")
    mask = np.asarray(mask, dtype=DTYPE).reshape(B, W, 1)
    pre = (x.data.reshape(B * W, D) @ w_ih.data + bias.data).reshape(B, W, 4 * H)
    order = range(W - 1, -1, -1) if reverse else range(W)
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    out = np.empty((B, W, H))
    cache = {}
    for t in order:
        gates = pre[:, t] + h @ w_hh.data
        i = _sigmoid(gates[:, :H])
        f = _sigmoid(gates[:, H:2 * H])
        gc = np.tanh(gates[:, 2 * H:3 * H])
        o = _sigmoid(gates[:, 3 * H:])
        c_new = f * c + i * gc
        tc = np.tanh(c_new)
        h_new = o * tc
        m = mask[:, t]
        cache[t] = (i, f, gc, o, c, h, tc)
        c = c + m * (c_new - c)
        h = h + m * (h_new - h)
        out[:, t] = h

    def fn(gout):
        dpre = np.empty((B, W, 4 * H))
        dw_hh = np.zeros_like(w_hh.data)
        dh_carry = np.zeros((B, H))
        dc_carry = np.zeros((B, H))
        for t in reversed(order):
            i, f, gc, o, c_prev, h_prev, tc = cache[t]
            m = mask[:, t]
            dh = gout[:, t] + dh_carry
            dh_new = m * dh
            dc_new = m * dc_carry + dh_new * o * (1.0 - tc * tc)
            dgates = np.concatenate([
                dc_new * gc * i * (1.0 - i),
                dc_new * c_prev * f * (1.0 - f),
                dc_new * i * (1.0 - gc * gc),
                dh_new * tc * o * (1.0 - o),
            ], axis=1)
            dpre[:, t] = dgates
            dw_hh += h_prev.T @ dgates
            dh_carry = (1.0 - m) * dh + dgates @ w_hh.data.T
            dc_carry = (1.0 - m) * dc_carry + dc_new * f
        flat = dpre.reshape(B * W, 4 * H)
        dx = (flat @ w_ih.data.T).reshape(B, W, D)
        dw_ih = x.data.reshape(B * W, D).T @ flat
        return dx, dw_ih, dw_hh, flat.sum(axis=0)

    return _make(out, (x, w_ih, w_hh, bias), fn)


# ------------------------------------------------------------ stochastic


def dropout_mask(shape, p: float, key: Sequence[int]) -> np.ndarray:
    """Counter-based (Philox) keep-mask scaled by 1/(1-p)."""
    bitgen = np.random.Philox(np.random.SeedSequence([int(k) for k in key]))
    keep = np.random.Generator(bitgen).random(shape) >= p
    return keep / (1.0 - p)


def dropout(a: Tensor, p: float, train: bool, key: Sequence[int] = (0,)) -> Tensor:
    if not train or p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    scale = dropout_mask(a.shape, p, key)
    return _make(a.data * scale, (a,), lambda g: (g * scale,))


class BatchNormState:
    """Running statistics for one batchnorm layer."""

    def __init__(self, features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros(features, dtype=DTYPE)
        self.running_var = np.ones(features, dtype=DTYPE)
        self.momentum = momentum
        self.eps = eps


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, train: bool) -> Tensor:
    """Batch normalization over axis 0 of a 2-D input."""
    if x.ndim != 2 or x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batchnorm: input {x.shape} vs {gamma.shape[0]} features")
    eps = state.eps
    if train:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        m = state.momentum
        n = x.shape[0]
        unbiased = var * n / max(n - 1, 1)
        state.running_mean = (1 - m) * state.running_mean + m * mu
        state.running_var = (1 - m) * state.running_var + m * unbiased
    else:
        mu, var = state.running_mean, state.running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data * xhat + beta.data

    def fn(g):
        ggamma = (g * xhat).sum(axis=0)
        gbeta = g.sum(axis=0)
        gx_hat = g * gamma.data
        if train:
            n = x.shape[0]
            gx = inv / n * (n * gx_hat - gx_hat.sum(axis=0) - xhat * (gx_hat * xhat).sum(axis=0))
        else:
            gx = gx_hat * inv
        return gx, ggamma, gbeta

    return _make(out, (x, gamma, beta), fn)


# --------------------------------------------------------------- backward


def backward(loss: Tensor, retain_tape: bool = False):
    """Populate ``.grad`` on every tensor that requires it.

    Gradients accumulate into existing ``.grad`` fields of leaves, so callers
    zero them between steps.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = get_tape()
    if not len(tape):
        raise RuntimeError("backward: tape is empty")
    # intermediate grads are kept in a side table so leaf .grad accumulation is explicit
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, parents, fn in reversed(tape.entries):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for p, pg in zip(parents, fn(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    # whatever remains un-popped belongs to leaves
    leaves = {}
    for out, parents, _ in tape.entries:
        for p in parents:
            if p.requires_grad and id(p) in grads:
                leaves[id(p)] = p
    if id(loss) in grads:
        leaves[id(loss)] = loss
    for key, p in leaves.items():
        g = np.array(grads[key], dtype=DTYPE)
        p.grad = g if p.grad is None else p.grad + g
    if not retain_tape:
        tape.clear()


# ------------------------------------------------------------- optimizer


class Adam:
    """Adam with L2 weight decay folded into the gradient."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr, self.beta1, self.beta2 = lr, beta1, beta2
        self.eps, self.weight_decay = eps, weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradientError(f"non-finite gradient in {p.name or 'parameter'}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for i, p in enumerate(self.params):
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / c1
            vhat = self.v[i] / c2
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: dict, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.0) -> list[np.ndarray]:
    """Functional Adam update; ``state`` holds ``m``, ``v`` lists and step count ``t``."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError("non-finite gradient")
    if not state:
        state["m"] = [np.zeros_like(p.data) for p in params]
        state["v"] = [np.zeros_like(p.data) for p in params]
        state["t"] = 0
    state["t"] += 1
    t = state["t"]
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g = g + weight_decay * p.data
        state["m"][i] = beta1 * state["m"][i] + (1 - beta1) * g
        state["v"][i] = beta2 * state["v"][i] + (1 - beta2) * g * g
        mhat = state["m"][i] / (1 - beta1 ** t)
        vhat = state["v"][i] / (1 - beta2 ** t)
        out.append(p.data - lr * mhat / (np.sqrt(vhat) + eps))
    return out


# ------------------------------------------------------------ checkpoints


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None):
    """Write a JSON manifest of named row-major arrays.

    ``json`` emits the shortest repr that round-trips a float64, so reload
    is bit-exact.
    """
    doc = {
        "format": "stgat-tensors/1",
        "meta": meta or {},
        "tensors": [
            {"name": name, "shape": list(np.shape(arr)),
             "values": np.asarray(arr, dtype=DTYPE).ravel().tolist()}
            for name, arr in sorted(tensors.items())
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=None, separators=(",", ":")))


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "stgat-tensors/1":
        raise ValueError(f"{path}: not a tensor manifest")
    tensors = {
        t["name"]: np.asarray(t["values"], dtype=DTYPE).reshape(t["shape"])
        for t in doc["tensors"]
    }
    return tensors, doc.get("meta", {})
