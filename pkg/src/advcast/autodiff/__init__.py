"""Minimal reverse-mode automatic differentiation on numpy arrays."""

from . import ops
from .checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .nn import BatchNormState, batch_norm, conv2d, conv_transpose2d
from .ops import (
    absolute,
    add,
    concat,
    div,
    getitem,
    leaky_relu,
    mul,
    neg,
    power,
    reduce_mean,
    reduce_sum,
    reshape,
    scale,
    split,
    sqrt,
    square,
    stack,
    sub,
    take,
)
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, as_tensor, backward, make_node

__all__ = [
    "Adam", "AdamState", "BatchNormState", "Tensor", "absolute", "adam_step", "add", "as_tensor",
    "backward", "batch_norm", "concat", "conv2d", "conv_transpose2d", "decode_checkpoint", "div",
    "encode_checkpoint", "getitem", "leaky_relu", "load_checkpoint", "make_node", "mul", "neg", "ops",
    "power", "reduce_mean", "reduce_sum", "reshape", "save_checkpoint", "scale", "split", "sqrt",
    "square", "stack", "sub", "take",
]
