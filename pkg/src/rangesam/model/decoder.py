"""RFB decoder with per-scale auxiliary heads. Internal layout is (B, H, W, C)."""
from __future__ import annotations

from ..autodiff import functional as F
from ..autodiff.nn import Module
from .config import ModelConfig
from .layers import ConvNormAct, Linear

RFB_DILATIONS = (1, 3, 5)


class RFB(Module):
    """Receptive field block: a 1x1 branch plus three dilated 3x3 branches."""

    def __init__(self, rng, cin, cout, eps=1e-6):
        b = cout // 4
        self.branch0 = ConvNormAct(rng, cin, b, 1, eps=eps)
        self.branches = [[ConvNormAct(rng, cin, b, 1, eps=eps), ConvNormAct(rng, b, b, 3, d, eps=eps)]
                         for d in RFB_DILATIONS]
        self.fuse = Linear(rng, cout, cout)
        self.shortcut = Linear(rng, cin, cout)

    def __call__(self, x):
        outs = [self.branch0(x)]
        for reduce, dilated in self.branches:
            outs.append(dilated(reduce(x)))
        return self.fuse(F.concat(outs, axis=-1)) + self.shortcut(x)


class Decoder(Module):
    def __init__(self, rng, cfg: ModelConfig):
        dc, nc = cfg.decoder_channels, cfg.num_classes
        self.rfbs = [RFB(rng, c, dc, cfg.ln_eps) for c in cfg.stage_channels]
        self.aux_heads = [Linear(rng, dc, nc) for _ in cfg.stage_channels]
        self.reduce = ConvNormAct(rng, dc * len(cfg.stage_channels), dc, 3, eps=cfg.ln_eps)
        self.classifier = Linear(rng, dc, nc)

    def __call__(self, feats, with_aux=True):
        """[F1..F4] channels-last -> (main (B,H,W,nc), [aux_i (B,H_i,W_i,nc)])."""
        H, W = feats[0].shape[1:3]
        normed = [rfb(f) for rfb, f in zip(self.rfbs, feats)]
        aux = [head(n) for head, n in zip(self.aux_heads, normed)] if with_aux else []
        ups = [n if n.shape[1:3] == (H, W) else F.upsample_bilinear(n, H, W, channels_last=True)
               for n in normed]
        main = self.classifier(self.reduce(F.concat(ups, axis=-1)))
        return main, aux
