"""Minimal reverse-mode automatic differentiation over numpy arrays."""
from .functional import conv2d, l1_loss, layer_norm, softmax
from .gradcheck import finite_diff_gradcheck
from .optim import AdamState, ParamStore, adam_step, clip_grad_norm, global_grad_norm, trunc_normal
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    concat_channels,
    elementwise,
    gelu,
    linear,
    matmul,
    matmul_batched,
    mean_all,
    mul,
    relu,
    reshape,
    roll,
    scale,
    sub,
    sum_all,
    swap_last,
    transpose,
)

__all__ = [
    "AdamState", "ParamStore", "Tensor", "adam_step", "add", "as_tensor", "backward",
    "clip_grad_norm", "concat", "concat_channels", "conv2d", "elementwise",
    "finite_diff_gradcheck", "gelu", "global_grad_norm", "l1_loss", "layer_norm", "linear",
    "matmul", "matmul_batched", "mean_all", "mul", "relu", "reshape", "roll", "scale",
    "softmax", "sub", "sum_all", "swap_last", "transpose", "trunc_normal",
]
