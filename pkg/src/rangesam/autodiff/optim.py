"""AdamW with per-group hyperparameters and the warmup + cosine schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def lr_schedule(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup 0 -> base_lr, then cosine annealing to 0 at ``total_steps``."""
    if not 0 <= warmup_steps <= total_steps:
        raise ValueError("need 0 <= warmup_steps <= total_steps")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / span)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def adamw_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, step: int,
               lr: float, weight_decay: float, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """One in-place AdamW update; ``step`` counts from 1.

    Weight decay is decoupled: it shrinks the weights directly and never
    enters the moment estimates.
    """
    b1, b2 = betas
    if weight_decay:
        param *= 1.0 - lr * weight_decay
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** step)
    v_hat = v / (1.0 - b2 ** step)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class ParamGroup:
    params: list
    lr: float
    weight_decay: float
    name: str = ""


@dataclass
class AdamW:
    groups: list
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step_count: int = 0
    state: dict = field(default_factory=dict)

    def _slots(self, p):
        key = id(p)
        if key not in self.state:
            self.state[key] = (np.zeros_like(p.data), np.zeros_like(p.data))
        return self.state[key]

    def zero_grad(self):
        for group in self.groups:
            for p in group.params:
                p.grad = None

    def step(self, lrs=None):
        """Apply one update. ``lrs`` optionally overrides each group's lr."""
        self.step_count += 1
        for gi, group in enumerate(self.groups):
            lr = group.lr if lrs is None else lrs[gi]
            for p in group.params:
                m, v = self._slots(p)
                grad = p.grad if p.grad is not None else np.zeros_like(p.data)
                adamw_step(p.data, grad.astype(p.data.dtype, copy=False), m, v, self.step_count,
                           lr, group.weight_decay, self.betas, self.eps)

    def moments(self, named_params):
        """Yield (name, m, v) for checkpointing."""
        for name, p in named_params:
            m, v = self._slots(p)
            yield name, m, v

    def load_moments(self, named_params, moments: dict, step_count: int):
        for name, p in named_params:
            if name in moments:
                m, v = moments[name]
                self.state[id(p)] = (m.astype(p.data.dtype).copy(), v.astype(p.data.dtype).copy())
        self.step_count = step_count
