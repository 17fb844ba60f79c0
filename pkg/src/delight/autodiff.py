"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op builds its output eagerly with numpy and, when any input requires a
gradient, attaches a backward rule plus references to its inputs. Calling
:meth:`Tensor.backward` linearises that graph into a :class:`Tape` (inputs
always before the ops that consume them) and replays the rules in reverse.

Matrix products also report their multiply-accumulate count to the active
:class:`MacCounter`, if one was opened with :func:`count_macs`.
"""
from __future__ import annotations

import math
from collections import defaultdict
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from scipy.special import erf

DTYPE = np.float64

_grad_enabled: ContextVar[bool] = ContextVar("delight_grad_enabled", default=True)
_counter: ContextVar["MacCounter | None"] = ContextVar("delight_mac_counter", default=None)
_scope: ContextVar[tuple[str, str]] = ContextVar("delight_mac_scope", default=("other", ""))


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """An n-dimensional float64 array that can take part in backpropagation.

    Tensors are never mutated by ops; ``grad`` is only written on leaves
    (tensors with ``requires_grad`` that were not produced by an op).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: float):
        return scale(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires it."""
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.size != 1:
                raise ShapeError(f"implicit gradient needs a scalar output, got shape {self.shape}")
            grad = np.ones_like(self.data)
        Tape.from_output(self).run_backward(self, np.asarray(grad, dtype=DTYPE))


class Tape:
    """Topologically ordered list of the tensors an output depends on."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
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
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.nodes)

    def run_backward(self, out: Tensor, seed: np.ndarray) -> None:
        grads: dict[int, np.ndarray] = {id(out): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(pg, parent.shape)
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


@contextmanager
def no_grad():
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class MacCounter:
    """Per-evaluation tally of multiply-accumulates performed by matmul."""

    def __init__(self):
        self.total = 0
        self.by_scope: dict[tuple[str, str], int] = defaultdict(int)

    def add(self, n: int) -> None:
        self.total += n
        self.by_scope[_scope.get()] += n


@contextmanager
def count_macs() -> Iterator[MacCounter]:
    counter = MacCounter()
    token = _counter.set(counter)
    try:
        yield counter
    finally:
        _counter.reset(token)


@contextmanager
def mac_scope(component: str, block: str = ""):
    """Attribute MACs inside the ``with`` body to ``(component, block)``.

    An empty ``block`` inherits the block label of the enclosing scope.
    """
    if not block:
        block = _scope.get()[1]
    token = _scope.set((component, block))
    try:
        yield
    finally:
        _scope.reset(token)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    out.op = op
    return out


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


# -- elementwise ----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from exc
    return _result(data, (a, b), lambda g: (g, g), "add")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc
    return _result(data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x.data**2) / math.sqrt(2.0 * math.pi)

    def backward(g):
        return (g * (cdf + x.data * pdf),)

    return _result(x.data * cdf, (x,), backward, "gelu")


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# -- reductions and shape ops ---------------------------------------------


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _result(data, (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum_(x, axis, keepdims), 1.0 / n)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in tensors]} on axis {axis}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(data, tuple(tensors), backward, "concat")


def split(x: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    sizes = [int(s) for s in sizes]
    if any(s < 0 for s in sizes) or sum(sizes) != x.shape[axis]:
        raise ShapeError(f"split sizes {sizes} do not sum to axis length {x.shape[axis]}")
    out = []
    start = 0
    for size in sizes:
        index = [slice(None)] * x.ndim
        index[axis] = slice(start, start + size)
        index = tuple(index)

        def backward(g, index=index):
            full = np.zeros_like(x.data)
            full[index] = g
            return (full,)

        out.append(_result(x.data[index], (x,), backward, "split"))
        start += size
    return out


def permute_features(x: Tensor, perm: Sequence[int]) -> Tensor:
    """Reorder the last axis: ``out[..., j] = x[..., perm[j]]``."""
    perm = np.asarray(perm, dtype=np.intp)
    d = x.shape[-1]
    if perm.shape != (d,) or not np.array_equal(np.sort(perm), np.arange(d)):
        raise ValueError(f"perm is not a bijection on {d} features")
    inverse = np.argsort(perm)
    return _result(x.data[..., perm], (x,), lambda g: (g[..., inverse],), "permute")


def embedding(weight: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.intp)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"token ids must lie in [0, {weight.shape[0]})")

    def backward(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids, g)
        return (gw,)

    return _result(weight.data[ids], (weight,), backward, "embedding")


# -- linear algebra -------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeError(f"matmul batch dims do not broadcast: {a.shape} @ {b.shape}") from exc
    data = np.matmul(a.data, b.data)
    counter = _counter.get()
    if counter is not None:
        counter.add(int(data.size) * a.shape[-1])

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return ga, gb

    return _result(data, (a, b), backward, "matmul")


# -- normalisation and probabilities --------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _result(y, (x,), backward, "log_softmax")


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply the optional affine map."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    parents: list[Tensor] = [x]
    y = xhat
    if gain is not None:
        y = y * gain.data
        parents.append(gain)
    if bias is not None:
        y = y + bias.data
        parents.append(bias)
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        dxhat = g * gain.data if gain is not None else g
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        grads = [dx]
        if gain is not None:
            grads.append((g * xhat).sum(axis=lead))
        if bias is not None:
            grads.append(g.sum(axis=lead))
        return tuple(grads)

    return _result(y, tuple(parents), backward, "layer_norm")


def cross_entropy_smoothed(
    logits: Tensor,
    target,
    epsilon: float = 0.1,
    ignore_index: int | None = None,
) -> Tensor:
    """Mean label-smoothed cross-entropy over the non-ignored positions.

    The target distribution puts ``1 - epsilon`` on the gold class and spreads
    ``epsilon`` evenly over the other ``V - 1`` classes.
    """
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"label smoothing must be in [0, 1), got {epsilon}")
    target = np.asarray(target, dtype=np.intp)
    vocab = logits.shape[-1]
    if target.shape != logits.shape[:-1]:
        raise ShapeError(f"target shape {target.shape} does not match logits {logits.shape}")
    if vocab < 2 and epsilon > 0:
        raise ValueError("label smoothing needs at least two classes")
    valid = np.ones(target.shape, dtype=bool) if ignore_index is None else target != ignore_index
    safe = np.where(valid, target, 0)
    if safe.size and (safe.min() < 0 or safe.max() >= vocab):
        raise IndexError(f"target ids must lie in [0, {vocab})")

    q = np.full(logits.shape, epsilon / (vocab - 1) if vocab > 1 else 0.0)
    np.put_along_axis(q, safe[..., None], 1.0 - epsilon, axis=-1)
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    per_token = -(q * logp).sum(axis=-1)
    count = int(valid.sum())
    loss = float((per_token * valid).sum() / count) if count else 0.0

    def backward(g):
        if not count:
            return (np.zeros_like(logits.data),)
        return (g * (np.exp(logp) - q) * (valid[..., None] / count),)

    return _result(np.asarray(loss), (logits,), backward, "cross_entropy")


def parameters_size(params: Iterable[Tensor]) -> int:
    return sum(p.size for p in params)
