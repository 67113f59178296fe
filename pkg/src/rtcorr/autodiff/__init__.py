"""Minimal reverse-mode automatic differentiation and the Adam optimiser."""
from . import ops
from .adam import AdamState, adam_step
from .checkpoint import load_checkpoint, save_checkpoint
from .ops import (add, bias_add, channel_bias_add, concat_cols, concat_rows, conv3d, elementwise_mul,
                  gather_rows, matmul, mean, relu, reshape, row_softmax, rowwise_matvec, rowwise_sum,
                  scalar_mul, segment_max, squared_norm, sub, subsample_inplane, sum, transpose)
from .tape import EmptySegment, NonScalarLoss, ShapeMismatch, Tape, Tensor, active_tape, backward

__all__ = [
    "AdamState", "EmptySegment", "NonScalarLoss", "ShapeMismatch", "Tape", "Tensor", "active_tape",
    "adam_step", "add", "backward", "bias_add", "channel_bias_add", "concat_cols", "concat_rows",
    "conv3d", "elementwise_mul", "gather_rows", "load_checkpoint", "matmul", "mean", "ops", "relu",
    "reshape", "row_softmax", "rowwise_matvec", "rowwise_sum", "save_checkpoint", "scalar_mul",
    "segment_max", "squared_norm", "sub", "subsample_inplane", "sum", "transpose",
]
