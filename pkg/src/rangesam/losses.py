"""Composite segmentation objective: weighted CE, soft Dice, soft IoU and an edge CE.

Logits are (B, C, H, W); targets are (B, H, W) integer labels where IGNORE
marks pixels that contribute nothing.
"""
from __future__ import annotations

import numpy as np

from .autodiff import as_tensor, functional as F
from .kitti import IGNORE

EPS = 1e-6
LOSS_NAMES = ("wce", "dice", "boundary", "iou")


def _check(logits, target):
    target = np.asarray(target)
    if target.ndim == 2:
        target = target[None]
    B, C, H, W = logits.shape
    if target.shape != (B, H, W):
        raise ValueError(f"target shape {target.shape} does not match logits {logits.shape}")
    valid = target != IGNORE
    if np.any(target[valid] >= C) or np.any(target[valid] < 0):
        raise ValueError("target labels out of range")
    return target, valid


def one_hot(target, num_classes, valid=None, dtype=np.float32):
    """(B,H,W) labels -> (B,C,H,W) indicator; IGNORE pixels are all-zero."""
    target = np.asarray(target)
    if valid is None:
        valid = target != IGNORE
    out = np.zeros((target.shape[0], num_classes) + target.shape[1:], dtype=dtype)
    b, h, w = np.nonzero(valid)
    out[b, target[b, h, w], h, w] = 1.0
    return out


def _zero(logits):
    # keeps the graph connected so backward yields zero gradients
    return F.sum(logits) * 0.0


def _masked_ce(logits, target, pixel_weight, count):
    """-(1/count) sum pixel_weight * log p[target]; pixel_weight is 0 where unused."""
    if count == 0:
        return _zero(logits)
    sel = pixel_weight > 0
    m = one_hot(target, logits.shape[1], sel, dtype=logits.dtype)
    m *= (pixel_weight / count).astype(logits.dtype)[:, None]
    return -F.sum(F.log_softmax(logits, axis=1) * m)


def wce_loss(logits, target, weights=None):
    """Mean over non-IGNORE pixels of w[t] * -log softmax(logits)[t]."""
    logits = as_tensor(logits)
    target, valid = _check(logits, target)
    C = logits.shape[1]
    w = np.ones(C) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (C,):
        raise ValueError(f"need {C} class weights, got {w.shape}")
    pix = np.zeros(target.shape)
    pix[valid] = w[target[valid]]
    return _masked_ce(logits, target, pix, int(valid.sum()))


def _soft_overlap(logits, target):
    logits = as_tensor(logits)
    target, valid = _check(logits, target)
    C = logits.shape[1]
    y = one_hot(target, C, valid, dtype=logits.dtype)
    p = F.softmax(logits, axis=1) * valid[:, None].astype(logits.dtype)
    inter = F.sum(p * y, axis=(0, 2, 3))
    psum = F.sum(p, axis=(0, 2, 3))
    ysum = y.sum(axis=(0, 2, 3))
    present = ysum > 0
    return inter, psum, ysum, present


def _one_minus_present_mean(scores, present, logits):
    k = int(present.sum())
    if k == 0:
        return _zero(logits)
    return 1.0 - F.sum(scores * (present / k).astype(scores.dtype))


def dice_loss(logits, target, eps: float = EPS):
    inter, psum, ysum, present = _soft_overlap(logits, target)
    dice = inter * 2.0 / (psum + ysum + eps)
    return _one_minus_present_mean(dice, present, logits)


def iou_loss(logits, target, eps: float = EPS):
    inter, psum, ysum, present = _soft_overlap(logits, target)
    iou = inter / (psum + ysum - inter + eps)
    return _one_minus_present_mean(iou, present, logits)


def boundary_mask(target):
    """Non-IGNORE pixels with a different non-IGNORE label among their 4 neighbours."""
    t = np.asarray(target)
    squeeze = t.ndim == 2
    if squeeze:
        t = t[None]
    valid = t != IGNORE
    edge = np.zeros(t.shape, dtype=bool)
    for axis in (1, 2):
        n = t.shape[axis]
        a = [slice(None)] * 3
        b = [slice(None)] * 3
        a[axis], b[axis] = slice(0, n - 1), slice(1, n)
        a, b = tuple(a), tuple(b)
        diff = (t[a] != t[b]) & valid[a] & valid[b]
        edge[a] |= diff
        edge[b] |= diff
    return edge[0] if squeeze else edge


def boundary_loss(logits, target):
    """Unit-weight cross-entropy restricted to label edges; 0 without edges."""
    logits = as_tensor(logits)
    target, _ = _check(logits, target)
    edge = boundary_mask(target)
    return _masked_ce(logits, target, edge.astype(np.float64), int(edge.sum()))


def loss_terms(logits, target, weights=None) -> dict:
    return {
        "wce": wce_loss(logits, target, weights),
        "dice": dice_loss(logits, target),
        "boundary": boundary_loss(logits, target),
        "iou": iou_loss(logits, target),
    }


def combine(terms: dict, lambdas=(1.0, 1.0, 1.0, 1.0)):
    total = None
    for lam, name in zip(lambdas, LOSS_NAMES):
        if lam == 0:
            continue
        t = terms[name] * float(lam)
        total = t if total is None else total + t
    if total is None:
        total = terms["wce"] * 0.0
    return total


def downsample_target(target, size):
    """Nearest-neighbour reduction of (B,H,W) labels by an integer factor."""
    target = np.asarray(target)
    h, w = size
    sh, sw = target.shape[-2] // h, target.shape[-1] // w
    if sh * h != target.shape[-2] or sw * w != target.shape[-1]:
        raise ValueError(f"cannot downsample {target.shape[-2:]} to {size} by an integer factor")
    return target[..., ::sh, ::sw]


def total_loss(main, aux, target, weights=None, lambdas=(1.0, 1.0, 1.0, 1.0), aux_weight: float = 0.4,
               return_terms: bool = False):
    """sum_i lambda_i L_i(main) + aux_weight * sum_j (same combination on aux_j)."""
    target = np.asarray(target)
    if target.ndim == 2:
        target = target[None]
    log = {}
    terms = loss_terms(main, target, weights)
    total = combine(terms, lambdas)
    log.update({k: float(v.data) for k, v in terms.items()})
    for j, a in enumerate(aux or []):
        t = downsample_target(target, a.shape[-2:])
        aux_terms = loss_terms(a, t, weights)
        aux_total = combine(aux_terms, lambdas)
        log[f"aux{j}"] = float(aux_total.data)
        total = total + aux_total * float(aux_weight)
    log["total"] = float(total.data)
    return (total, log) if return_terms else total


def class_weights_from_freq(freq, floor: float = 1e-4) -> np.ndarray:
    """w_c = 1/sqrt(f_c + floor), rescaled to mean 1. Counts are normalized to fractions."""
    f = np.asarray(freq, dtype=np.float64)
    if f.ndim != 1 or np.any(f < 0):
        raise ValueError("frequencies must be a non-negative vector")
    if f.sum() > 0:
        f = f / f.sum()
    w = 1.0 / np.sqrt(f + floor)
    return w / w.mean()


def label_frequencies(labels, num_classes) -> np.ndarray:
    lab = np.asarray(labels).ravel()
    lab = lab[lab != IGNORE]
    return np.bincount(lab.astype(np.int64), minlength=num_classes)[:num_classes].astype(np.float64)
