"""Confusion-matrix accumulation, IoU and the per-class results table."""
from __future__ import annotations

import json
from typing import NamedTuple

import numpy as np

from .kitti import CLASS_NAMES, IGNORE, NUM_CLASSES


class IoUResult(NamedTuple):
    per_class: np.ndarray  # NaN for classes with a zero denominator
    mean: float
    empty: bool


class ConfusionMatrix:
    """Counts with rows = ground truth, columns = prediction. IGNORE rows are skipped."""

    def __init__(self, num_classes: int = NUM_CLASSES, m=None):
        self.num_classes = num_classes
        self.m = np.zeros((num_classes, num_classes), dtype=np.int64) if m is None else np.array(m, dtype=np.int64)
        if self.m.shape != (num_classes, num_classes):
            raise ValueError(f"matrix must be {num_classes}x{num_classes}")

    def update(self, gt, pred):
        gt = np.asarray(gt).ravel().astype(np.int64)
        pred = np.asarray(pred).ravel().astype(np.int64)
        if gt.shape != pred.shape:
            raise ValueError(f"gt has {gt.size} entries, pred has {pred.size}")
        keep = gt != IGNORE
        gt, pred = gt[keep], pred[keep]
        n = self.num_classes
        if np.any((gt < 0) | (gt >= n)):
            raise ValueError("ground-truth label out of range")
        if np.any((pred < 0) | (pred >= n)):
            raise ValueError("prediction out of range on a labelled entry")
        self.m += np.bincount(gt * n + pred, minlength=n * n).reshape(n, n)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("class count mismatch")
        return ConfusionMatrix(self.num_classes, self.m + other.m)

    def __add__(self, other):
        return self.merge(other)

    @property
    def total(self) -> int:
        return int(self.m.sum())

    def miou(self) -> IoUResult:
        return miou(self.m)


def miou(cm) -> IoUResult:
    m = np.asarray(cm.m if isinstance(cm, ConfusionMatrix) else cm, dtype=np.float64)
    tp = np.diag(m)
    denom = m.sum(axis=0) + m.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(denom > 0, tp / denom, np.nan)
    present = denom > 0
    if not present.any():
        return IoUResult(iou, 0.0, True)
    return IoUResult(iou, float(iou[present].mean()), False)


def pixel_accuracy(cm) -> float:
    m = np.asarray(cm.m if isinstance(cm, ConfusionMatrix) else cm)
    return float(np.trace(m) / m.sum()) if m.sum() else 0.0


def format_table(result: IoUResult, names=CLASS_NAMES, label: str = "ours") -> str:
    """One header row and one value row: method, each class IoU (%), mIoU (%)."""
    if len(names) != len(result.per_class):
        raise ValueError("need one name per class")
    cells = ["n/a" if np.isnan(v) else f"{100 * v:.1f}" for v in result.per_class]
    mean = "n/a" if result.empty else f"{100 * result.mean:.1f}"
    head = ["method"] + list(names) + ["mIoU"]
    row = [label] + cells + [mean]
    widths = [max(len(h), len(r)) for h, r in zip(head, row)]
    line = " | ".join(h.rjust(w) for h, w in zip(head, widths))
    sep = "-+-".join("-" * w for w in widths)
    vals = " | ".join(r.rjust(w) for r, w in zip(row, widths))
    return "\n".join([line, sep, vals])


def to_json(result: IoUResult, cm=None, names=CLASS_NAMES, **extra) -> str:
    d = {
        "miou": result.mean,
        "empty": result.empty,
        "per_class": {n: (None if np.isnan(v) else float(v)) for n, v in zip(names, result.per_class)},
    }
    if cm is not None:
        m = cm.m if isinstance(cm, ConfusionMatrix) else np.asarray(cm)
        d["confusion"] = m.tolist()
        d["pixel_accuracy"] = pixel_accuracy(m)
    d.update(extra)
    return json.dumps(d, indent=2, sort_keys=False)
