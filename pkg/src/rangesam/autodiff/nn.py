"""Tiny module system: named parameter discovery and train/eval mode."""
from __future__ import annotations

import numpy as np

from .tensor import Parameter


def trunc_normal(rng, shape, std=0.02):
    """Normal(0, std) truncated to +-2 std by resampling."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


class Module:
    training = True

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Parameter):
                        yield f"{name}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def set_group(self, group: str):
        for p in self.parameters():
            p.group = group
        return self

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict: bool = True):
        own = dict(self.named_parameters())
        if strict:
            missing = own.keys() - state.keys()
            if missing:
                raise KeyError(f"missing parameters: {sorted(missing)[:5]}")
        for name, arr in state.items():
            if name not in own:
                if strict:
                    raise KeyError(f"unexpected parameter {name!r}")
                continue
            p = own[name]
            if tuple(arr.shape) != p.shape:
                raise ValueError(f"{name}: shape {tuple(arr.shape)} != {p.shape}")
            p.data = np.array(arr, dtype=p.dtype)

    def to_dtype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self
