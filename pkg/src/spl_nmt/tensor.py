"""Small reverse-mode autodiff engine over numpy arrays.

Operations are recorded on a :class:`Tape` only while one is active::

    with Tape() as tape:
        loss = tensor.sum(tensor.mul(x, w))
    tape.backward(loss)

Outside a tape every op is a plain numpy computation, which is how the Monte
Carlo confidence passes run without recording gradients.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(FloatingPointError):
    """A non-finite value appeared where a finite one is required."""


class Tensor:
    """Dense array with an optional gradient."""

    __slots__ = ("values", "grad", "requires_grad", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.asarray(values, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def numpy(self) -> np.ndarray:
        return self.values

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class Node:
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_local = threading.local()


def _tape_stack() -> list["Tape"]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad():
    """Suspend recording, even inside an active tape."""
    stack = _tape_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


@dataclass
class Tape:
    """Ordered computation record. Nodes are appended in execution order, so the
    list is topologically sorted by construction."""

    nodes: list[Node] = field(default_factory=list)
    backward_calls: int = 0

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()

    def record(self, kind, inputs, output, backward) -> None:
        self.nodes.append(Node(kind, tuple(inputs), output, backward))

    def backward(self, loss: Tensor, grad: np.ndarray | None = None) -> None:
        """Accumulate d(loss)/d(x) into ``x.grad`` for every recorded input."""
        if grad is None:
            if loss.values.size != 1:
                raise ShapeError("backward() without an explicit grad needs a scalar loss")
            grad = np.ones_like(loss.values)
        self.backward_calls += 1
        loss.grad = np.asarray(grad, dtype=DTYPE)
        for node in reversed(self.nodes):
            g = node.output.grad
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                inp.grad = gi if inp.grad is None else inp.grad + gi


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(values: np.ndarray, inputs: Sequence[Tensor], kind: str, backward) -> Tensor:
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(values, requires_grad=needs)
    if needs:
        tape.record(kind, inputs, out, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.values + b.values, (a, b), "add",
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.values - b.values, (a, b), "sub",
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.values, (a,), "neg", lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.values, b.values
    return _make(av * bv, (a, b), "mul",
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.values * c, (a,), "scale", lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    keep = a.values > 0
    return _make(a.values * keep, (a,), "relu", lambda g: (g * keep,))


def gelu(a: Tensor) -> Tensor:
    # tanh approximation
    x = a.values
    c = np.sqrt(2.0 / np.pi)
    inner = c * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = c * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner),)

    return _make(out, (a,), "gelu", backward)


# ---------------------------------------------------------------------------
# reductions and shape


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(a.values, axis=axis, keepdims=keepdims), (a,), "sum", backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.values.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.values.reshape(shape), (a,), "reshape", lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _make(np.transpose(a.values, axes), (a,), "transpose",
                 lambda g: (np.transpose(g, inv),))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading dims broadcast like ``np.matmul``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.shape} @ {b.shape} "
            f"({a.shape[-1]} != {b.shape[-2]})")
    av, bv = a.values, b.values

    def backward(g):
        if bv.ndim == 2 and av.ndim > 2:
            ga = g @ bv.T
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _make(av @ bv, (a, b), "matmul", backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight + bias`` over the last axis."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} != weight rows {weight.shape[0]}")
    xv, wv = x.values, weight.values
    out = xv @ wv
    if bias is not None:
        out = out + bias.values

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wv.T
        gw = xv.reshape(-1, xv.shape[-1]).T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, inputs, "linear", backward)


# ---------------------------------------------------------------------------
# normalisation


def _softmax_np(x: np.ndarray, axis: int) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    y = _softmax_np(x.values, axis)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), "softmax", backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.values - x.values.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _make(y, (x,), "log_softmax", backward)


def masked_softmax(scores: Tensor, mask: np.ndarray, scale_by: float = 1.0) -> Tensor:
    """Softmax over the last axis of ``scale_by * scores`` where ``mask`` is False
    entries receive probability zero. ``mask`` broadcasts against ``scores``; every
    row must keep at least one entry."""
    x = np.where(mask, scores.values * scale_by, -np.inf)
    y = _softmax_np(x, -1)

    def backward(g):
        return (scale_by * y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (scores,), "masked_softmax", backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    xv = x.values
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    d = xv.shape[-1]

    def backward(g):
        gv = gamma.values
        gxhat = g * gv
        gx = inv / d * (d * gxhat - gxhat.sum(-1, keepdims=True)
                        - xhat * (gxhat * xhat).sum(-1, keepdims=True))
        flat = (g * xhat).reshape(-1, d)
        return gx, flat.sum(axis=0), g.reshape(-1, d).sum(axis=0)

    return _make(xhat * gamma.values + beta.values, (x, gamma, beta), "layer_norm", backward)


# ---------------------------------------------------------------------------
# indexing


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"token id out of range [0, {vocab})")
    shape = table.shape

    def backward(g):
        gt = np.zeros(shape, dtype=DTYPE)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (gt,)

    return _make(table.values[ids], (table,), "embedding", backward)


def pick(x: Tensor, ids) -> Tensor:
    """Select ``x[..., ids[...]]`` along the last axis (one entry per position)."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != x.shape[:-1]:
        raise ShapeError(f"pick: index shape {ids.shape} does not match {x.shape[:-1]}")
    vocab = x.shape[-1]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"target id out of range [0, {vocab})")
    flat_ids = ids.reshape(-1)
    rows = np.arange(flat_ids.size)
    shape = x.shape

    def backward(g):
        gx = np.zeros((flat_ids.size, vocab), dtype=DTYPE)
        gx[rows, flat_ids] = g.reshape(-1)
        return (gx.reshape(shape),)

    out = x.values.reshape(-1, vocab)[rows, flat_ids].reshape(ids.shape)
    return _make(out, (x,), "pick", backward)


def cross_entropy_per_token(logits: Tensor, targets, pad_mask=None) -> Tensor:
    """``-log softmax(logits)[target]`` per position; zero where ``pad_mask`` is False.

    ``pad_mask`` is True on real tokens. Leading dims of ``logits`` match ``targets``.
    """
    targets = np.asarray(targets, dtype=np.int64)
    nll = neg(pick(log_softmax(logits, -1), targets))
    if pad_mask is None:
        return nll
    return mul(nll, np.asarray(pad_mask, dtype=DTYPE))


# ---------------------------------------------------------------------------
# dropout


def dropout_mask(shape, keep_prob: float, seed) -> np.ndarray:
    """Boolean keep-mask; a pure function of (seed, shape, keep_prob)."""
    _check_keep(keep_prob)
    shape = tuple(shape)
    n = int(np.prod(shape))
    bits = np.frombuffer(np.random.default_rng(seed).bytes(2 * n), dtype=np.uint16)
    # 16-bit resolution: the realised keep rate is within 2**-17 of keep_prob
    return (bits < round(keep_prob * 65536)).reshape(shape)


def _check_keep(keep_prob: float) -> None:
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must lie in (0, 1], got {keep_prob}")


def dropout(x: Tensor, keep_prob: float, seed, training: bool = True) -> Tensor:
    """Inverted dropout: kept entries are scaled by 1/keep_prob while training."""
    _check_keep(keep_prob)
    if not training or keep_prob == 1.0:
        return x
    m = dropout_mask(x.shape, keep_prob, seed) * (1.0 / keep_prob)
    return _make(x.values * m, (x,), "dropout", lambda g: (g * m,))
