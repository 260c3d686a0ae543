"""Full network plus channels-first wrappers for the individual stages."""
from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, as_tensor, functional as F
from ..autodiff.nn import Module
from .config import ModelConfig
from .decoder import RFB, Decoder
from .encoder import Encoder, Stem, StageTransition, add_pos_embed

BACKBONE, HEAD = "backbone", "head"

PUBLISHED_PARAM_CLAIMS = {
    "approximately 30 million parameters (training setup)": 30e6,
    "63M-parameter architecture (evaluation)": 63e6,
    "RFB decoders contributing about 30 million parameters (discussion)": 30e6,
}


def to_nhwc(x):
    return F.transpose(as_tensor(x), (0, 2, 3, 1))


def to_nchw(x):
    return F.transpose(x, (0, 3, 1, 2))


class RangeSAM(Module):
    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0):
        self.cfg = cfg or ModelConfig()
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(rng, self.cfg).set_group(BACKBONE)
        self.decoder = Decoder(rng, self.cfg).set_group(HEAD)

    def forward_nhwc(self, x, rng=None, with_aux=True):
        feats = self.encoder(x, rng)
        main, aux = self.decoder(feats, with_aux)
        return main, aux, feats

    def __call__(self, x, rng=None, with_aux=True):
        """(B,6,H,W) -> (main (B,nc,H,W), [aux_i (B,nc,H_i,W_i)])."""
        x = as_tensor(x)
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ValueError(f"expected (B,{self.cfg.in_channels},H,W) input, got {x.shape}")
        main, aux, _ = self.forward_nhwc(to_nhwc(x), rng, with_aux)
        return to_nchw(main), [to_nchw(a) for a in aux]

    def param_groups(self) -> dict:
        groups = {BACKBONE: [], HEAD: []}
        for p in self.parameters():
            groups[p.group].append(p)
        return groups


# channels-first functional wrappers -----------------------------------------
def stem_forward(x, stem: Stem):
    return to_nchw(stem(to_nhwc(x)))


def pos_embed_forward(x, table, scale):
    return to_nchw(add_pos_embed(to_nhwc(x), table, scale))


def stage_transition(x, module: StageTransition):
    return to_nchw(module(to_nhwc(x)))


def encoder_forward(x, encoder: Encoder, rng=None):
    return [to_nchw(f) for f in encoder(to_nhwc(x), rng)]


def rfb_forward(x, rfb: RFB):
    return to_nchw(rfb(to_nhwc(x)))


def decoder_forward(feats, decoder: Decoder):
    main, aux = decoder([to_nhwc(f) for f in feats])
    return to_nchw(main), [to_nchw(a) for a in aux]


# parameter accounting ---------------------------------------------------------
def count_parameters(params) -> int:
    """Trainable scalar count of a Module or an iterable of tensors."""
    if isinstance(params, Module):
        params = params.parameters()
    total = 0
    for p in params:
        total += count_parameters(p) if isinstance(p, Module) else int(np.prod(p.shape))
    return total


def parameter_breakdown(model: RangeSAM) -> dict:
    enc, dec = model.encoder, model.decoder
    out = {
        "stem": count_parameters(enc.stem),
        "blocks": count_parameters(enc.blocks),
        "transitions": count_parameters(enc.transitions),
        "rfb": count_parameters(dec.rfbs),
        "aux_heads": count_parameters(dec.aux_heads),
        "fusion": count_parameters([*dec.reduce.parameters(), *dec.classifier.parameters()]),
    }
    for s in range(model.cfg.num_stages):
        idx = [i for i in range(model.cfg.num_blocks) if model.cfg.stage_of_block(i) == s]
        out[f"stage{s + 1}"] = count_parameters([p for i in idx for p in enc.blocks[i].parameters()])
    out["encoder"] = count_parameters(enc)
    out["decoder"] = count_parameters(dec)
    out["total"] = out["encoder"] + out["decoder"]
    return out


def parameter_report(model: RangeSAM) -> str:
    b = parameter_breakdown(model)
    lines = ["module            parameters"]
    for key in ("stem", "stage1", "stage2", "stage3", "stage4", "transitions", "encoder",
                "rfb", "aux_heads", "fusion", "decoder", "total"):
        if key in b:
            lines.append(f"{key:<16}{b[key]:>13,d}")
    lines.append("")
    lines.append("published figures disagree with each other; the count above is reported, not asserted:")
    for claim, value in PUBLISHED_PARAM_CLAIMS.items():
        ref = b["decoder"] if claim.startswith("RFB") else b["total"]
        lines.append(f"  {claim}: {value / 1e6:.0f}M vs measured {ref / 1e6:.2f}M ({ref / value:.2f}x)")
    lines.append("  INCONSISTENT: the 30M and 63M totals cannot both hold for one architecture")
    return "\n".join(lines)

