"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

A ``Tensor`` wraps an ndarray and records the operation that produced it.
Calling :meth:`Tensor.backward` on a scalar result walks the recorded graph
in reverse topological order and accumulates gradients into every reachable
leaf that has ``requires_grad`` set.  Graph recording is skipped entirely
when no input requires gradients, so inference runs with no bookkeeping.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

__all__ = [
    "Tensor",
    "tensor",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "transpose",
    "sigmoid",
    "tanh",
    "relu",
    "exp",
    "log",
    "clip_min",
    "softmax",
    "tsum",
    "tmean",
    "concat",
    "take_rows",
    "gather_rc",
]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_bw")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        # Leaves with requires_grad own a persistent accumulator buffer.
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._parents = ()
        self._bw = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, grad={'yes' if self.requires_grad else 'no'})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self):
        """Accumulate d(self)/d(leaf) into every requires_grad leaf.

        ``self`` must hold exactly one element.  Iterative traversal; GRU
        graphs over long sequences exceed the default recursion limit.
        """
        if self.data.size != 1:
            raise DimensionError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        if not self.requires_grad:
            return  # constant loss: nothing on the path, all gradients stay zero

        order = _toposort(self)
        gmap = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = gmap.pop(id(node), None)
            if g is None:
                continue
            if node._bw is None:
                if node.grad is not None:
                    node.grad += g
                continue
            for parent, pg in node._bw(g):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in gmap:
                    gmap[key] = gmap[key] + pg
                else:
                    gmap[key] = pg


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen = {id(root)}
    stack: list[tuple[Tensor, iter]] = [(root, iter(root._parents))]
    while stack:
        node, it = stack[-1]
        advanced = False
        for p in it:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def tensor(x, requires_grad: bool = False, name: str = "") -> Tensor:
    """Wrap ``x`` as a Tensor; passes an existing Tensor through unchanged."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=requires_grad, name=name)


def _node(data, parents, bw) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = None  # interior nodes never accumulate persistently
        out._parents = parents
        out._bw = bw
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    out = a.data + b.data

    def bw(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape)))

    return _node(out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    out = a.data - b.data

    def bw(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(-g, b.data.shape)))

    return _node(out, (a, b), bw)


def neg(a) -> Tensor:
    a = tensor(a)
    return _node(-a.data, (a,), lambda g: ((a, -g),))


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    out = a.data * b.data

    def bw(g):
        return (
            (a, _unbroadcast(g * b.data, a.data.shape)),
            (b, _unbroadcast(g * a.data, b.data.shape)),
        )

    return _node(out, (a, b), bw)


def matmul(a, b) -> Tensor:
    """Matrix product with 1-D/2-D operands, mirroring ``np.matmul`` semantics."""
    a, b = tensor(a), tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise DimensionError(f"matmul supports 1-D/2-D operands, got {ad.ndim}-D @ {bd.ndim}-D")
    if ad.shape[-1] != (bd.shape[0] if bd.ndim >= 1 else None):
        raise DimensionError(f"matmul inner dims differ: {ad.shape} @ {bd.shape}")
    out = ad @ bd

    def bw(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return ((a, g @ bd.T), (b, ad.T @ g))
        if ad.ndim == 2 and bd.ndim == 1:
            return ((a, np.outer(g, bd)), (b, ad.T @ g))
        if ad.ndim == 1 and bd.ndim == 2:
            return ((a, bd @ g), (b, np.outer(ad, g)))
        return ((a, g * bd), (b, g * ad))  # 1-D @ 1-D -> scalar

    return _node(out, (a, b), bw)


def transpose(a) -> Tensor:
    a = tensor(a)
    return _node(a.data.T, (a,), lambda g: ((a, g.T),))


def sigmoid(a) -> Tensor:
    a = tensor(a)
    # exp of a non-positive argument only: never overflows
    e = np.exp(-np.abs(a.data))
    out = np.where(a.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def bw(g):
        return ((a, g * out * (1.0 - out)),)

    return _node(out, (a,), bw)


def tanh(a) -> Tensor:
    a = tensor(a)
    out = np.tanh(a.data)

    def bw(g):
        return ((a, g * (1.0 - out * out)),)

    return _node(out, (a,), bw)


def relu(a) -> Tensor:
    """max(0, x); the subgradient at exactly zero is taken as zero."""
    a = tensor(a)
    out = np.maximum(a.data, 0.0)

    def bw(g):
        return ((a, g * (a.data > 0.0)),)

    return _node(out, (a,), bw)


def exp(a) -> Tensor:
    a = tensor(a)
    out = np.exp(a.data)

    def bw(g):
        return ((a, g * out),)

    return _node(out, (a,), bw)


def log(a) -> Tensor:
    a = tensor(a)
    out = np.log(a.data)

    def bw(g):
        return ((a, g / a.data),)

    return _node(out, (a,), bw)


def clip_min(a, lo: float) -> Tensor:
    """max(x, lo) elementwise; gradient passes only where x > lo."""
    a = tensor(a)
    out = np.maximum(a.data, lo)

    def bw(g):
        return ((a, g * (a.data > lo)),)

    return _node(out, (a,), bw)


def softmax(a) -> Tensor:
    """Row-wise stable softmax over the last axis (max-subtraction)."""
    a = tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return ((a, out * (g - dot)),)

    return _node(out, (a,), bw)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return ((a, np.broadcast_to(g, a.data.shape).copy()),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return ((a, np.broadcast_to(gg, a.data.shape).copy()),)

    return _node(out, (a,), bw)


def tmean(a, axis=None) -> Tensor:
    a = tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


def concat(a, b) -> Tensor:
    """Concatenate along the last axis."""
    a, b = tensor(a), tensor(b)
    if a.data.ndim != b.data.ndim:
        raise DimensionError(f"concat rank mismatch: {a.data.shape} vs {b.data.shape}")
    out = np.concatenate([a.data, b.data], axis=-1)
    split = a.data.shape[-1]

    def bw(g):
        return ((a, g[..., :split]), (b, g[..., split:]))

    return _node(out, (a, b), bw)


def take_rows(table, idx) -> Tensor:
    """Row gather ``table[idx]``; backward scatter-adds into the table."""
    table = tensor(table)
    idx = np.asarray(idx, dtype=np.intp)
    out = table.data[idx]

    def bw(g):
        buf = np.zeros_like(table.data)
        np.add.at(buf, idx, g)
        return ((table, buf),)

    return _node(out, (table,), bw)


def gather_rc(a, rows, cols) -> Tensor:
    """Element gather ``a[rows, cols]`` -> 1-D; backward scatter-adds."""
    a = tensor(a)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    out = a.data[rows, cols]

    def bw(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, (rows, cols), g)
        return ((a, buf),)

    return _node(out, (a,), bw)
