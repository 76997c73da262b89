"""Minimal dense tensor engine with reverse-mode differentiation."""

from . import ops
from .gradcheck import check_gradients, numerical_gradient, relative_error
from .ops import (
    add,
    bilinear_resize,
    concat,
    conv2d,
    div,
    elementwise,
    gelu,
    layer_norm,
    matmul,
    maximum,
    mul,
    relu,
    reshape,
    softmax,
    split,
    stack,
    sub,
    transpose,
)
from .serialize import dump_tensor, dumps_tensor, load_tensor, loads_tensor
from .spectral import FFTSizeError, irfft2, rfft2
from .tensor import DEFAULT_DTYPE, ShapeError, Tape, TapeError, Tensor

__all__ = [
    "DEFAULT_DTYPE",
    "FFTSizeError",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "add",
    "bilinear_resize",
    "check_gradients",
    "concat",
    "conv2d",
    "div",
    "dump_tensor",
    "dumps_tensor",
    "elementwise",
    "gelu",
    "irfft2",
    "layer_norm",
    "load_tensor",
    "loads_tensor",
    "matmul",
    "maximum",
    "mul",
    "numerical_gradient",
    "ops",
    "relative_error",
    "relu",
    "reshape",
    "rfft2",
    "softmax",
    "split",
    "stack",
    "sub",
    "transpose",
]
