"""Small numpy tensor engine with tape-based reverse-mode differentiation."""

from .gradcheck import grad_check
from .ops import (
    ShapeError,
    add,
    amax,
    concat,
    conv2d,
    div,
    flatten,
    layer_norm,
    matmul,
    maximum,
    maxpool2,
    mean,
    mul,
    relu,
    reshape,
    softmax_rows,
    square,
    sub,
    sum,
    transpose,
    upsample2,
)
from .optim import AdamState, adam_step
from .rng import Rng
from .tensor import Tape, Tensor, as_tensor, backward, default_dtype, precision, set_default_dtype

__all__ = [
    "AdamState", "Rng", "ShapeError", "Tape", "Tensor",
    "adam_step", "add", "amax", "as_tensor", "backward", "concat", "conv2d",
    "default_dtype", "div", "flatten", "grad_check", "layer_norm", "matmul",
    "maximum", "maxpool2", "mean", "mul", "precision", "relu", "reshape",
    "set_default_dtype", "softmax_rows", "square", "sub", "sum", "transpose",
    "upsample2",
]
