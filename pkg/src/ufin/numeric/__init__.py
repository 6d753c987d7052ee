"""Dense tensor arithmetic, reverse-mode autodiff, Adam, checkpoints."""

from ufin.numeric.adam import AdamState, adam_step, zero_grads
from ufin.numeric.checkpoint import load_checkpoint, save_checkpoint
from ufin.numeric.tensor import (
    Tensor,
    add,
    clamp,
    concat,
    cos,
    exp,
    layer_norm,
    log,
    matmul,
    mul,
    relu,
    repeat_rows,
    reshape,
    row,
    rows,
    scale,
    scale_cols,
    scale_rows,
    sigmoid,
    sin,
    slice_cols,
    softmax,
    softplus,
    sub,
    tile_cols,
    transpose,
    tsum,
)

__all__ = [
    "AdamState",
    "Tensor",
    "adam_step",
    "add",
    "clamp",
    "concat",
    "cos",
    "exp",
    "layer_norm",
    "load_checkpoint",
    "log",
    "matmul",
    "mul",
    "relu",
    "repeat_rows",
    "reshape",
    "row",
    "rows",
    "save_checkpoint",
    "scale",
    "scale_cols",
    "scale_rows",
    "sigmoid",
    "sin",
    "slice_cols",
    "softmax",
    "softplus",
    "sub",
    "tile_cols",
    "transpose",
    "tsum",
    "zero_grads",
]
