"""Minimal dense tensor engine with reverse-mode automatic differentiation."""
from .tensor import (Parameter, Tensor, as_tensor, default_dtype, get_default_dtype,
                     is_grad_enabled, no_grad, set_default_dtype)
from .functional import (MASK_NEG, attention, concat, conv2d, dropout_path, gelu, layer_norm,
                         linear, log_softmax, masked_mha, pool2d_mean, softmax, upsample_bilinear)
from .optim import AdamW, ParamGroup, adamw_step, lr_schedule
from .checkpoint import load_checkpoint, save_checkpoint
from .nn import Module

__all__ = [
    "Parameter", "Tensor", "as_tensor", "default_dtype", "get_default_dtype", "is_grad_enabled",
    "no_grad", "set_default_dtype", "MASK_NEG", "attention", "concat", "conv2d", "dropout_path",
    "gelu", "layer_norm", "linear", "log_softmax", "masked_mha", "pool2d_mean", "softmax",
    "upsample_bilinear", "AdamW", "ParamGroup", "adamw_step", "lr_schedule", "load_checkpoint",
    "save_checkpoint", "Module",
]
