"""Finite-difference oracle for the reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward, zero_grads


def grad_check(f, params, eps: float = 1e-4) -> float:
    """Max relative error between reverse-mode and central differences.

    ``f`` rebuilds the scalar loss from ``params`` (dict or list of Tensors)
    on every call and must be deterministic (freeze any sampling noise).
    The relative error uses max(1, |a|, |n|) as denominator so near-zero
    gradients are compared absolutely.
    """
    tensors = list(params.values()) if isinstance(params, dict) else list(params)
    zero_grads(tensors)
    out = f()
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ValueError("grad_check expects f() to return a scalar Tensor")
    backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    worst = 0.0
    for t, a in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f().data)
            flat[i] = orig - eps
            lo = float(f().data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            ai = float(a.reshape(-1)[i])
            err = abs(ai - numeric) / max(1.0, abs(ai), abs(numeric))
            worst = max(worst, err)
    zero_grads(tensors)
    return worst
