"""Parameterized building blocks. Feature maps are channels-last (B, H, W, C)."""
from __future__ import annotations

import numpy as np

from ..autodiff import Parameter, functional as F
from ..autodiff.nn import Module, trunc_normal


class Linear(Module):
    def __init__(self, rng, cin, cout, bias=True, std=0.02):
        self.weight = Parameter(trunc_normal(rng, (cin, cout), std).astype(np.float32))
        self.bias = Parameter(np.zeros(cout, dtype=np.float32)) if bias else None

    def __call__(self, x):
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-6):
        self.weight = Parameter(np.ones(dim, dtype=np.float32))
        self.bias = Parameter(np.zeros(dim, dtype=np.float32))
        self.eps = eps

    def __call__(self, x):
        return F.layer_norm(x, self.weight, self.bias, self.eps)


class Conv2d(Module):
    """Channels-last convolution with a (Cout, Cin/groups, k, k) weight."""

    def __init__(self, rng, cin, cout, kernel, padding=0, dilation=1, groups=1, std=0.02):
        self.weight = Parameter(trunc_normal(rng, (cout, cin // groups, kernel, kernel), std).astype(np.float32))
        self.bias = Parameter(np.zeros(cout, dtype=np.float32))
        self.padding, self.dilation, self.groups = padding, dilation, groups

    def __call__(self, x):
        return F.conv2d(x, self.weight, self.bias, 1, self.padding, self.dilation, self.groups,
                        channels_last=True)


class ConvNormAct(Module):
    def __init__(self, rng, cin, cout, kernel=1, dilation=1, eps=1e-6):
        if kernel == 1:
            self.conv = Linear(rng, cin, cout)
        else:
            self.conv = Conv2d(rng, cin, cout, kernel, padding=dilation * (kernel // 2), dilation=dilation)
        self.norm = LayerNorm(cout, eps)

    def __call__(self, x):
        return F.gelu(self.norm(self.conv(x)))
