"""Numerical substrate: tensors, reverse-mode differentiation, Adam."""
from . import kernels
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tensor,
    add,
    as_tensor,
    default_dtype,
    dropout,
    float64_mode,
    layer_norm,
    matmul,
    max_pool_last,
    mse_loss,
    no_grad,
    parameter,
    relu,
    reshape,
    set_default_dtype,
    softmax_cross_entropy,
    softmax_rows,
    transpose,
)

__all__ = [
    "Adam", "AdamState", "Tensor", "adam_step", "add", "as_tensor", "default_dtype",
    "dropout", "float64_mode", "kernels", "layer_norm", "matmul", "max_pool_last",
    "mse_loss", "no_grad", "parameter", "relu", "reshape", "set_default_dtype",
    "softmax_cross_entropy", "softmax_rows", "transpose",
]
