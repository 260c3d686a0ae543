"""Point-cloud augmentations (before projection) and range-view ones (after)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kitti import IGNORE, PointCloud
from .projection import EMPTY, RangeImage

# bicycle, motorcycle, truck, other-vehicle, person, bicyclist, motorcyclist
RARE_CLASSES = (1, 2, 3, 4, 5, 6, 7)


@dataclass
class AugConfig:
    p_rotate: float = 1.0
    p_jitter: float = 1.0
    p_flip: float = 1.0
    p_drop: float = 1.0
    p_mix: float = 0.9
    p_union: float = 0.1
    p_shift: float = 0.9
    p_paste: float = 1.0
    jitter_sigma: float = 0.01
    jitter_clip: float = 0.05
    drop_max: float = 0.1
    mix_sectors: int = 4
    paste_classes: tuple = RARE_CLASSES

    def __post_init__(self):
        self.paste_classes = tuple(int(c) for c in self.paste_classes)
        for name in ("p_rotate", "p_jitter", "p_flip", "p_drop", "p_mix", "p_union", "p_shift", "p_paste",
                     "drop_max"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.jitter_sigma < 0 or self.jitter_clip < 0:
            raise ValueError("jitter parameters must be non-negative")
        if self.mix_sectors < 1:
            raise ValueError("mix_sectors must be >= 1")

    @classmethod
    def disabled(cls) -> "AugConfig":
        return cls(**{k: 0.0 for k in ("p_rotate", "p_jitter", "p_flip", "p_drop",
                                        "p_mix", "p_union", "p_shift", "p_paste")})


# ---------------------------------------------------------------------------
# 3D
# ---------------------------------------------------------------------------
def rotate_z(pc: PointCloud, angle: float) -> PointCloud:
    c, s = np.cos(angle), np.sin(angle)
    xyz = pc.xyz.astype(np.float64)
    out = xyz.copy()
    out[:, 0] = c * xyz[:, 0] - s * xyz[:, 1]
    out[:, 1] = s * xyz[:, 0] + c * xyz[:, 1]
    return PointCloud(out, pc.remission.copy(), None if pc.labels is None else pc.labels.copy())


def augment3d(pc: PointCloud, cfg: AugConfig, rng) -> PointCloud:
    """Rotate about z, jitter, flip x/y, drop points; each gated by its probability."""
    out = PointCloud(pc.xyz.copy(), pc.remission.copy(), None if pc.labels is None else pc.labels.copy())
    if rng.random() < cfg.p_rotate:
        out = rotate_z(out, rng.uniform(0.0, 2 * np.pi))
    if rng.random() < cfg.p_jitter:
        noise = np.clip(rng.normal(0.0, cfg.jitter_sigma, size=out.xyz.shape), -cfg.jitter_clip, cfg.jitter_clip)
        out.xyz = (out.xyz + noise).astype(np.float32)
    if rng.random() < cfg.p_flip:
        flips = rng.random(2) < 0.5
        for axis in np.nonzero(flips)[0]:
            out.xyz[:, axis] *= -1
    if rng.random() < cfg.p_drop and len(out):
        n_drop = int(np.floor(rng.uniform(0.0, cfg.drop_max) * len(out)))
        if n_drop:
            drop = rng.choice(len(out), size=n_drop, replace=False)
            keep = np.ones(len(out), dtype=bool)
            keep[drop] = False
            out = out.subset(keep)
    return out


# ---------------------------------------------------------------------------
# range view
# ---------------------------------------------------------------------------
def _labels(img: RangeImage) -> np.ndarray:
    if img.labels is not None:
        return img.labels
    return np.full(img.shape, IGNORE, dtype=np.uint8)


def _detached(channels, labels) -> RangeImage:
    return RangeImage(channels, np.full(labels.shape, EMPTY, dtype=np.int64), None, labels)


def _same_dims(a: RangeImage, b: RangeImage):
    if a.channels.shape != b.channels.shape:
        raise ValueError(f"raster dims differ: {a.channels.shape} vs {b.channels.shape}")


def _take_where(a: RangeImage, b: RangeImage, mask) -> RangeImage:
    ch = np.where(mask[None], b.channels, a.channels)
    lab = np.where(mask, _labels(b), _labels(a)).astype(np.uint8)
    return _detached(ch, lab)


def band_edges(width: int, sectors: int) -> np.ndarray:
    return (np.arange(sectors + 1) * width) // sectors


def range_mix(a: RangeImage, b: RangeImage, sectors: int = 4, rng=None, bands=None) -> RangeImage:
    """Replace a random subset of equal column bands of ``a`` with ``b``'s."""
    _same_dims(a, b)
    W = a.shape[1]
    if bands is None:
        bands = np.nonzero(rng.random(sectors) < 0.5)[0]
    edges = band_edges(W, sectors)
    cols = np.zeros(W, dtype=bool)
    for k in bands:
        cols[edges[k]:edges[k + 1]] = True
    return _take_where(a, b, np.broadcast_to(cols, a.shape))


def range_union(a: RangeImage, b: RangeImage) -> RangeImage:
    """Fill ``a``'s empty pixels with ``b``'s valid ones."""
    _same_dims(a, b)
    return _take_where(a, b, ~a.valid & b.valid)


def range_shift(a: RangeImage, rng=None, offset=None) -> RangeImage:
    """Cyclic roll of every raster along the width axis."""
    W = a.shape[1]
    if offset is None:
        offset = int(rng.integers(0, W))
    ch = np.roll(a.channels, offset, axis=2)
    lab = np.roll(_labels(a), offset, axis=1)
    return _detached(ch, lab)


def range_paste(a: RangeImage, b: RangeImage, classes=RARE_CLASSES) -> RangeImage:
    """Copy ``b``'s pixels whose label is in ``classes`` over ``a``."""
    _same_dims(a, b)
    mask = b.valid & np.isin(_labels(b), np.asarray(list(classes), dtype=np.int64))
    return _take_where(a, b, mask)


def augment_range(img: RangeImage, other: RangeImage | None, cfg: AugConfig, rng) -> RangeImage:
    """Mix, union, shift, paste in that order, each gated by its probability.

    ``other`` is a second sample supplying content for mix/union/paste; without
    it those three are skipped.
    """
    out = img
    if other is not None and rng.random() < cfg.p_mix:
        out = range_mix(out, other, cfg.mix_sectors, rng)
    if other is not None and rng.random() < cfg.p_union:
        out = range_union(out, other)
    if rng.random() < cfg.p_shift:
        out = range_shift(out, rng)
    if other is not None and rng.random() < cfg.p_paste:
        out = range_paste(out, other, cfg.paste_classes)
    return out
