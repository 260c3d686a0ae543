"""Stem, Hiera blocks and stage transitions. Internal layout is (B, H, W, C)."""
from __future__ import annotations

import numpy as np

from ..autodiff import MASK_NEG, Parameter, Tensor, as_tensor, functional as F
from ..autodiff.nn import Module, trunc_normal
from .config import ModelConfig
from .layers import Conv2d, LayerNorm, Linear


def add_pos_embed(x, table, scale):
    """x (B,H,W,C) + scale[c] * bilinear_up(table) broadcast over channels."""
    _, H, W, _ = x.shape
    th, tw = table.shape
    up = F.upsample_bilinear(F.reshape(table, (1, th, tw, 1)), H, W, channels_last=True)
    return x + up * scale


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------
def window_partition(x, win):
    """Zero-pad (B,H,W,C) to multiples of ``win`` and cut into token sequences.

    Returns windows of shape (B*nw, rows*cols, C) and a record (B, H, W, Hp, Wp)
    used by ``window_unpartition``.
    """
    x = as_tensor(x)
    B, H, W, C = x.shape
    r, c = win
    Hp, Wp = -(-H // r) * r, -(-W // c) * c
    if (Hp, Wp) != (H, W):
        x = F.pad(x, ((0, 0), (0, Hp - H), (0, Wp - W), (0, 0)))
    t = F.reshape(x, (B, Hp // r, r, Wp // c, c, C))
    t = F.transpose(t, (0, 1, 3, 2, 4, 5))
    return F.reshape(t, (B * (Hp // r) * (Wp // c), r * c, C)), (B, H, W, Hp, Wp)


def window_unpartition(windows, win, record):
    B, H, W, Hp, Wp = record
    r, c = win
    C = windows.shape[-1]
    t = F.reshape(windows, (B, Hp // r, Wp // c, r, c, C))
    t = F.transpose(t, (0, 1, 3, 2, 4, 5))
    t = F.reshape(t, (B, Hp, Wp, C))
    if (Hp, Wp) != (H, W):
        t = F.getitem(t, (slice(None), slice(0, H), slice(0, W)))
    return t


def padding_key_mask(record, win, dtype=np.float32):
    """Additive (nw, 1, 1, T) mask hiding zero-padded keys, or None without padding."""
    B, H, W, Hp, Wp = record
    if (Hp, Wp) == (H, W):
        return None
    r, c = win
    valid = np.zeros((Hp, Wp), dtype=bool)
    valid[:H, :W] = True
    v = valid.reshape(Hp // r, r, Wp // c, c).transpose(0, 2, 1, 3).reshape(-1, r * c)
    m = np.where(v, 0.0, MASK_NEG).astype(dtype)
    m = np.tile(m, (B, 1))
    return m[:, None, None, :]


def window_mask(H, W, win, dtype=np.float32):
    """Block-diagonal additive (HW, HW) mask: 0 inside a window, MASK_NEG across."""
    r, c = win
    rows = np.arange(H)[:, None] // r
    cols = np.arange(W)[None, :] // c
    unit = (rows * (-(-W // c)) + cols).ravel()
    return np.where(unit[:, None] == unit[None, :], 0.0, MASK_NEG).astype(dtype)


# ---------------------------------------------------------------------------
# modules
# ---------------------------------------------------------------------------
class Stem(Module):
    def __init__(self, rng, cfg: ModelConfig):
        C = cfg.stem_channels
        self.proj = Linear(rng, cfg.in_channels, C)
        self.norm = LayerNorm(C, cfg.ln_eps)
        self.patch = Conv2d(rng, C, C, 7, padding=3)
        self.pos_mode = cfg.pos_mode
        if cfg.pos_mode == "grid":
            self.pos_table = Parameter(trunc_normal(rng, cfg.pos_table_shape).astype(np.float32))
            self.pos_scale = Parameter(np.ones(C, dtype=np.float32))
        else:
            self.pos_table = self.pos_scale = None
        self.in_channels = cfg.in_channels

    def __call__(self, x):
        if x.shape[-1] != self.in_channels:
            raise ValueError(f"stem expects {self.in_channels} input channels, got {x.shape[-1]}")
        x = self.patch(F.gelu(self.norm(self.proj(x))))
        if self.pos_table is not None:
            x = add_pos_embed(x, self.pos_table, self.pos_scale)
        return x


class Attention(Module):
    def __init__(self, rng, dim, heads):
        self.heads = heads
        self.wq, self.wk, self.wv, self.wo = (Linear(rng, dim, dim) for _ in range(4))

    def __call__(self, tokens, mask=None):
        return F.masked_mha(tokens, self.wq.weight, self.wk.weight, self.wv.weight, self.wo.weight,
                            self.heads, mask, self.wq.bias, self.wk.bias, self.wv.bias, self.wo.bias)


class HieraBlock(Module):
    """Pre-norm attention sublayer followed by a conv-MLP sublayer."""

    def __init__(self, rng, dim, heads, window, is_global=False, drop_rate=0.0, mlp_ratio=4,
                 use_dwconv=True, eps=1e-6):
        hidden = mlp_ratio * dim
        self.norm1 = LayerNorm(dim, eps)
        self.attn = Attention(rng, dim, heads)
        self.norm2 = LayerNorm(dim, eps)
        self.fc1 = Linear(rng, dim, hidden)
        self.dwconv = Conv2d(rng, hidden, hidden, 3, padding=1, groups=hidden) if use_dwconv else None
        self.fc2 = Linear(rng, hidden, dim)
        self.window = tuple(window)
        self.is_global = is_global
        self.drop_rate = drop_rate

    def mix(self, y, route="partition"):
        B, H, W, C = y.shape
        if self.is_global:
            out = self.attn(F.reshape(y, (B, H * W, C)))
            return F.reshape(out, (B, H, W, C))
        if route == "mask":
            mask = window_mask(H, W, self.window, y.dtype)
            out = self.attn(F.reshape(y, (B, H * W, C)), mask)
            return F.reshape(out, (B, H, W, C))
        tokens, record = window_partition(y, self.window)
        out = self.attn(tokens, padding_key_mask(record, self.window, y.dtype))
        return window_unpartition(out, self.window, record)

    def mlp(self, y):
        h = F.gelu(self.fc1(y))
        if self.dwconv is not None:
            h = F.gelu(self.dwconv(h))
        return self.fc2(h)

    def _drop(self, y, rng, mask):
        if not self.training or self.drop_rate <= 0.0:
            return y
        return F.dropout_path(y, self.drop_rate, True, rng=rng, mask=mask)

    def __call__(self, x, rng=None, route="partition", drop_masks=(None, None)):
        x = x + self._drop(self.mix(self.norm1(x), route), rng, drop_masks[0])
        return x + self._drop(self.mlp(self.norm2(x)), rng, drop_masks[1])


class StageTransition(Module):
    def __init__(self, rng, dim):
        self.proj = Linear(rng, dim, 2 * dim)

    def __call__(self, x):
        _, H, W, _ = x.shape
        if H % 2 or W % 2:
            x = F.pad(x, ((0, 0), (0, H % 2), (0, W % 2), (0, 0)))
        return self.proj(F.pool2d_mean(x, 2, 2, channels_last=True))


class Encoder(Module):
    def __init__(self, rng, cfg: ModelConfig):
        self.cfg = cfg
        self.stem = Stem(rng, cfg)
        rates = cfg.drop_rates()
        self.blocks = []
        for i in range(cfg.num_blocks):
            s = cfg.stage_of_block(i)
            self.blocks.append(HieraBlock(rng, cfg.stage_channels[s], cfg.heads[s], cfg.window_sizes[s],
                                          is_global=i in cfg.global_blocks, drop_rate=rates[i],
                                          mlp_ratio=cfg.mlp_ratio, use_dwconv=cfg.use_dwconv,
                                          eps=cfg.ln_eps))
        self.transitions = [StageTransition(rng, c) for c in cfg.stage_channels[:-1]]

    def __call__(self, x, rng=None):
        """x (B,H,W,6) -> [F1..F4] channels-last."""
        x = self.stem(x)
        feats = []
        i = 0
        for s, nb in enumerate(self.cfg.stage_blocks):
            if s > 0:
                x = self.transitions[s - 1](x)
            for _ in range(nb):
                x = self.blocks[i](x, rng)
                i += 1
            feats.append(x)
        return feats
