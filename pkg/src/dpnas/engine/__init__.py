"""Minimal reverse-mode tensor engine for NSC blocks."""

from .kernels import BACKEND, available_backends
from .optim import adam_step, kaiming_init, seeded_rng, step_lr, zero_grad
from .tensor import (
    Parameter,
    ShapeError,
    Tensor,
    add,
    channel_pad,
    concat_channels,
    conv2d,
    mse,
    pad_crop,
    pixel_shuffle,
    pixel_unshuffle,
    prelu,
    prior_mix,
    psnr,
    weighted_sum,
)
from .gradcheck import GradReport, grad_check
from .dump import TruncatedDump, load_tensors, read_tensor, save_tensors, tensor_bytes

__all__ = [
    "BACKEND", "available_backends", "adam_step", "kaiming_init", "seeded_rng", "step_lr",
    "zero_grad", "Parameter", "ShapeError", "Tensor", "add", "channel_pad", "concat_channels",
    "conv2d", "mse", "pad_crop", "pixel_shuffle", "pixel_unshuffle", "prelu", "prior_mix",
    "psnr", "weighted_sum", "GradReport", "grad_check", "TruncatedDump", "load_tensors",
    "read_tensor", "save_tensors", "tensor_bytes",
]
