"""Dense compute core with reverse-mode gradient accumulation."""

from .tensor import (
    Tensor,
    add,
    backward,
    clip,
    concat,
    constant,
    div,
    exp,
    log,
    log_softmax,
    matmul,
    mul,
    narrow,
    no_grad,
    parameter,
    pick_rows,
    relu,
    scale_gradient,
    sigmoid,
    softmax_data,
    stop_gradient,
    sum_,
    tanh,
    zero_grads,
)
from .layers import affine, fan_in_uniform, lstm_cell
from .dists import CategoricalHead, DiagGaussian, kl_diag_gauss, reparam_with_noise, sample_reparam
from .gradcheck import grad_check

__all__ = [
    "Tensor", "add", "backward", "clip", "concat", "constant", "div", "exp",
    "log", "log_softmax", "matmul", "mul", "narrow", "no_grad", "parameter",
    "pick_rows", "relu", "scale_gradient", "sigmoid", "softmax_data",
    "stop_gradient", "sum_", "tanh", "zero_grads",
    "affine", "fan_in_uniform", "lstm_cell",
    "CategoricalHead", "DiagGaussian", "kl_diag_gauss", "reparam_with_noise",
    "sample_reparam", "grad_check",
]
