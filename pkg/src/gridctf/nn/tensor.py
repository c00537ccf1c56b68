"""Reverse-mode autodiff over numpy buffers.

Every op records its parents and a backward closure on the produced node;
``backward`` replays a topological order iteratively (unrolls reach a few
thousand nodes, far past the recursion limit).  Dtype follows the inputs,
so float32 training graphs and float64 test graphs coexist.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording, e.g. while acting in the environment."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = parents
        self._backward = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            # copy: g may alias a consumer's buffer or a view of it
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"


def constant(x, dtype=None) -> Tensor:
    return Tensor(np.asarray(x, dtype=dtype))


def parameter(x) -> Tensor:
    return Tensor(np.asarray(x), requires_grad=True)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _track(*parents: Tensor) -> bool:
    return _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents)


def _make(data, parents, backward_fn) -> Tensor:
    if _GRAD_ENABLED and backward_fn is not None and _track(*parents):
        return Tensor(data, parents=parents, backward_fn=backward_fn)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a, b if isinstance(b, Tensor) else None), _as_tensor(b, a if isinstance(a, Tensor) else None)
    out_data = a.data + b.data

    def bwd(g):
        a.accumulate(_unbroadcast(g, a.data.shape))
        b.accumulate(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a, b if isinstance(b, Tensor) else None), _as_tensor(b, a if isinstance(a, Tensor) else None)
    out_data = a.data * b.data

    def bwd(g):
        a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a, b if isinstance(b, Tensor) else None), _as_tensor(b, a if isinstance(a, Tensor) else None)
    out_data = a.data / b.data

    def bwd(g):
        a.accumulate(_unbroadcast(g / b.data, a.data.shape))
        b.accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out_data, (a, b), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data @ b.data

    def bwd(g):
        a.accumulate(g @ b.data.T)
        b.accumulate(a.data.T @ g)

    return _make(out_data, (a, b), bwd)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def bwd(g):
        x.accumulate(g * (1.0 - y * y))

    return _make(y, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.data))

    def bwd(g):
        x.accumulate(g * y * (1.0 - y))

    return _make(y, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0.0)

    def bwd(g):
        x.accumulate(g * (x.data > 0))

    return _make(y, (x,), bwd)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)

    def bwd(g):
        x.accumulate(g * y)

    return _make(y, (x,), bwd)


def log(x: Tensor) -> Tensor:
    y = np.log(x.data)

    def bwd(g):
        x.accumulate(g / x.data)

    return _make(y, (x,), bwd)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    y = np.clip(x.data, lo, hi)
    inside = (x.data > lo) & (x.data < hi)

    def bwd(g):
        x.accumulate(g * inside)

    return _make(y, (x,), bwd)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    y = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x.accumulate(np.broadcast_to(g, x.data.shape).copy())

    return _make(y, (x,), bwd)


def concat(xs: list[Tensor], axis: int = -1) -> Tensor:
    xs = [x if isinstance(x, Tensor) else Tensor(np.asarray(x)) for x in xs]
    y = np.concatenate([x.data for x in xs], axis=axis)
    sizes = [x.data.shape[axis] for x in xs]

    def bwd(g):
        offset = 0
        for x, size in zip(xs, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + size)
            x.accumulate(g[tuple(idx)])
            offset += size

    return _make(y, tuple(xs), bwd)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    y = x.data[idx]

    def bwd(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        x.accumulate(full)

    return _make(y, (x,), bwd)


def pick_rows(x: Tensor, indices: np.ndarray) -> Tensor:
    """Select one column per row: out[i] = x[i, indices[i]]."""
    indices = np.asarray(indices)
    rows = np.arange(x.data.shape[0])
    y = x.data[rows, indices]

    def bwd(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (rows, indices), g)
        x.accumulate(full)

    return _make(y, (x,), bwd)


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise log softmax over the last axis."""
    m = x.data.max(axis=-1, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    probs = np.exp(y)

    def bwd(g):
        x.accumulate(g - probs * g.sum(axis=-1, keepdims=True))

    return _make(y, (x,), bwd)


def softmax_data(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def stop_gradient(x: Tensor) -> Tensor:
    return Tensor(x.data)


def scale_gradient(x: Tensor, factor) -> Tensor:
    """Identity in the forward pass; multiplies the gradient by ``factor``."""
    factor = np.asarray(factor, dtype=x.data.dtype)

    def bwd(g):
        x.accumulate(_unbroadcast(g * factor, x.data.shape))

    return _make(x.data, (x,), bwd)


def backward(root: Tensor) -> None:
    """Accumulate gradients of ``root`` (a scalar) into every reachable node."""
    if root.data.size != 1:
        raise ValueError("backward expects a scalar root")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    root.accumulate(np.ones_like(root.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params) -> None:
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.grad = None
