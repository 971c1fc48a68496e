"""Minimal differentiable numerical substrate: ops, parameters, Adam, checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import FiniteDifferenceReport, finite_difference_check
from .ops import (
    avg_pool2d,
    avg_pool2d_backward,
    col2im,
    conv2d,
    conv2d_backward,
    depthwise_conv2d,
    depthwise_conv2d_backward,
    depthwise_separable_conv,
    global_avg_pool,
    global_avg_pool_backward,
    im2col,
    linear,
    linear_backward,
    relu,
    relu_backward,
    softmax,
    tensor,
)
from .params import AdamHyper, Parameter, adam_step

__all__ = [
    "AdamHyper",
    "FiniteDifferenceReport",
    "Parameter",
    "adam_step",
    "avg_pool2d",
    "avg_pool2d_backward",
    "col2im",
    "conv2d",
    "conv2d_backward",
    "depthwise_conv2d",
    "depthwise_conv2d_backward",
    "depthwise_separable_conv",
    "finite_difference_check",
    "global_avg_pool",
    "global_avg_pool_backward",
    "im2col",
    "linear",
    "linear_backward",
    "load_checkpoint",
    "relu",
    "relu_backward",
    "save_checkpoint",
    "softmax",
    "tensor",
]
