"""Minimal reverse-mode differentiation over the primitives GLU-Net needs."""

from .ops import (
    PRIMITIVES,
    abs_sum,
    add,
    apply_primitive,
    batchnorm2d,
    clamp,
    concat,
    conv2d,
    conv_transpose2d,
    flatten,
    gather_rows,
    linear,
    log,
    matmul,
    maxpool2d,
    mean,
    mse,
    mul,
    reciprocal,
    relu,
    reshape,
    scale,
    square,
    sub,
    sum_,
    upsample_bilinear,
)
from .optim import AdamState, adam_step
from .tensor import Tensor, backward

__all__ = [
    "PRIMITIVES", "AdamState", "Tensor", "abs_sum", "adam_step", "add", "apply_primitive",
    "backward", "batchnorm2d", "clamp", "concat", "conv2d", "conv_transpose2d", "flatten",
    "gather_rows", "linear", "log", "matmul", "maxpool2d", "mean", "mse", "mul",
    "reciprocal", "relu", "reshape", "scale", "square", "sub", "sum_", "upsample_bilinear",
]
