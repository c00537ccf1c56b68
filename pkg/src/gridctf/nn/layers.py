"""Affine layers and the gated recurrent cell."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, add, concat, matmul, mul, narrow, sigmoid, tanh


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


def fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...], dtype=np.float32) -> np.ndarray:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); fan_in is the first dim."""
    scale = 1.0 / np.sqrt(shape[0])
    return rng.uniform(-scale, scale, size=shape).astype(dtype)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """Input/forget/output-gated memory cell.

    ``w`` has shape (input+hidden, 4*hidden) with gate order (i, f, g, o).
    """
    hidden = h.data.shape[-1]
    z = affine(concat([x, h], axis=-1), w, b)
    i = sigmoid(narrow(z, -1, 0, hidden))
    f = sigmoid(narrow(z, -1, hidden, hidden))
    g = tanh(narrow(z, -1, 2 * hidden, hidden))
    o = sigmoid(narrow(z, -1, 3 * hidden, hidden))
    c2 = add(mul(f, c), mul(i, g))
    h2 = mul(o, tanh(c2))
    return h2, c2
