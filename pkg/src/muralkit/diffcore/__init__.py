"""Deterministic reverse-mode tensor engine used by all five networks."""

from .check import finite_diff_check
from .layers import (
    Activation,
    Conv,
    PowerIterState,
    Sequential,
    SpectralConv,
    Upsample,
    kaiming,
    spectral_normalize,
)
from .optim import Adam, clip_global_norm
from .tensor import (
    Parameter,
    Tensor,
    absolute,
    add,
    concat,
    conv2d,
    crop,
    div,
    exp,
    grad_enabled,
    leaky_relu,
    matmul,
    max_pool2x2,
    maximum,
    mul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softmax,
    square,
    sub,
    tmean,
    transpose,
    tsum,
    upsample_nearest,
)

__all__ = [
    "Activation",
    "Adam",
    "Conv",
    "Parameter",
    "PowerIterState",
    "Sequential",
    "SpectralConv",
    "Tensor",
    "Upsample",
    "absolute",
    "add",
    "clip_global_norm",
    "concat",
    "conv2d",
    "crop",
    "div",
    "exp",
    "finite_diff_check",
    "grad_enabled",
    "kaiming",
    "leaky_relu",
    "matmul",
    "max_pool2x2",
    "maximum",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "sigmoid",
    "softmax",
    "spectral_normalize",
    "square",
    "sub",
    "tmean",
    "transpose",
    "tsum",
    "upsample_nearest",
]
