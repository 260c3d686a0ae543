"""Central finite-difference checks for the tape."""
from __future__ import annotations

import re

import numpy as np

from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """max |a - n| / max(max|a|, max|n|, floor).

    A larger ``floor`` treats gradients below it as structurally zero (e.g. a
    key bias under softmax) instead of dividing FD noise by ~0.
    """
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(fn, inputs, h: float = 1e-5, max_entries: int | None = None, seed: int = 0,
                    floor: float = 1e-12):
    """Compare backprop against central differences for every tensor in ``inputs``.

    ``fn`` maps no arguments to an output tensor; it is projected onto a fixed
    random direction so the full Jacobian participates. At most
    ``max_entries`` randomly chosen coordinates per input are perturbed.
    Returns one relative error per input.
    """
    rng = np.random.default_rng(seed)
    out = fn()
    direction = rng.standard_normal(out.shape)

    def scalar():
        return float(np.sum(fn().data.astype(np.float64) * direction))

    for t in inputs:
        t.grad = None
    out = fn()
    out.backward(direction.astype(out.dtype))
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64).copy() for t in inputs]

    errors = []
    for t, ana in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = scalar()
            flat[i] = orig - h
            fm = scalar()
            flat[i] = orig
            num[j] = (fp - fm) / (2 * h)
        errors.append(relative_error(ana.reshape(-1)[idx], num, floor))
    return errors


def leaf(arr, dtype=np.float64) -> Tensor:
    return Tensor(np.array(arr, dtype=dtype), requires_grad=True)


def randomize(module, seed: int = 0, gain: float = 1.0):
    """Re-draw parameters at O(1) activation scale for well-conditioned FD checks."""
    rng = np.random.default_rng(seed)
    for name, p in module.named_parameters():
        if p.data.ndim == 1:
            base = 1.0 if re.search(r"norm\d?\.weight$", name) else 0.0
            p.data[...] = base + 0.1 * rng.standard_normal(p.shape)
        else:
            fan_in = p.shape[0] if p.ndim == 2 else int(np.prod(p.shape[1:]))
            p.data[...] = gain * rng.standard_normal(p.shape) / np.sqrt(fan_in)
    return module
