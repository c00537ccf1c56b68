"""Diagonal Gaussians with reparameterised sampling, and the categorical head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, add, exp, log_softmax, mul, pick_rows, softmax_data, sum_


@dataclass
class DiagGaussian:
    """Factorised normal distribution parameterised by mean and log stddev."""

    mean: Tensor
    log_std: Tensor

    def __post_init__(self):
        if self.mean.data.shape != self.log_std.data.shape:
            raise ValueError(
                f"mean shape {self.mean.data.shape} != log_std shape {self.log_std.data.shape}"
            )

    @property
    def dim(self) -> int:
        return self.mean.data.shape[-1]

    def detached(self) -> "DiagGaussian":
        return DiagGaussian(Tensor(self.mean.data.copy()), Tensor(self.log_std.data.copy()))

    @staticmethod
    def standard(shape, std: float = 1.0, dtype=np.float64) -> "DiagGaussian":
        return DiagGaussian(
            Tensor(np.zeros(shape, dtype=dtype)),
            Tensor(np.full(shape, np.log(std), dtype=dtype)),
        )


def kl_diag_gauss(q: DiagGaussian, p: DiagGaussian) -> Tensor:
    """KL(q || p) summed over the last axis:
    sum log(sp/sq) + (sq^2 + (mq-mp)^2) / (2 sp^2) - 1/2."""
    if q.mean.data.shape[-1] != p.mean.data.shape[-1]:
        raise ValueError(f"dimension mismatch: q has {q.mean.data.shape[-1]}, p has {p.mean.data.shape[-1]}")
    log_ratio = add(p.log_std, mul(q.log_std, -1.0))
    var_q = exp(mul(q.log_std, 2.0))
    dmean = add(q.mean, mul(p.mean, -1.0))
    inv_var_p = exp(mul(p.log_std, -2.0))
    quad = mul(add(var_q, mul(dmean, dmean)), mul(inv_var_p, 0.5))
    per_dim = add(add(log_ratio, quad), -0.5)
    return sum_(per_dim, axis=-1)


def sample_reparam(d: DiagGaussian, rng: np.random.Generator) -> tuple[Tensor, np.ndarray]:
    """z = mean + std * eps with eps ~ N(0, I); returns (z, eps).

    Gradients flow to both mean and log_std; the drawn noise is returned so
    the same sample can be replayed later.
    """
    eps = rng.standard_normal(d.mean.data.shape).astype(d.mean.data.dtype)
    return reparam_with_noise(d, eps), eps


def reparam_with_noise(d: DiagGaussian, eps: np.ndarray) -> Tensor:
    return add(d.mean, mul(exp(d.log_std), eps))


class CategoricalHead:
    """Categorical distribution over composite actions, built from logits."""

    def __init__(self, logits: Tensor):
        if not np.all(np.isfinite(logits.data)):
            raise ValueError("categorical head received non-finite logits")
        self.logits = logits
        self.log_probs = log_softmax(logits)
        self.probs = softmax_data(logits.data)

    def entropy(self) -> Tensor:
        p = exp(self.log_probs)
        return mul(sum_(mul(p, self.log_probs), axis=-1), -1.0)

    def log_prob(self, actions: np.ndarray) -> Tensor:
        return pick_rows(self.log_probs, actions)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(self.probs.shape[:-1] + (1,))
        cdf = np.cumsum(self.probs, axis=-1)
        return np.minimum((u > cdf).sum(axis=-1), self.probs.shape[-1] - 1)

    def greedy(self) -> np.ndarray:
        return self.probs.argmax(axis=-1)
