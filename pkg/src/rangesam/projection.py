"""Spherical range-view projection, min-range rasterization and k-NN back-projection."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kitti import IGNORE, PointCloud

EMPTY = -1
CHANNELS = ("range", "x", "y", "z", "remission", "valid")


@dataclass
class ProjectionConfig:
    height: int = 64
    width: int = 2048
    fov_up: float = math.radians(3.0)     # radians above the horizon
    fov_down: float = math.radians(25.0)  # radians below the horizon, positive magnitude
    # Angle added to the elevation before normalizing the row coordinate.
    # "fov_up" evaluates v = (1 - (phi + fov_up)/fov) * h exactly as printed;
    # "fov_down" is the usual range-image layout where phi = +fov_up lands on
    # row 0 and phi = -fov_down on the bottom row.
    row_anchor: str = "fov_up"

    def __post_init__(self):
        if self.height < 1 or self.width < 2:
            raise ValueError(f"raster must be at least 1x2, got {self.height}x{self.width}")
        if not self.fov_up + self.fov_down > 0:
            raise ValueError("fov_up + fov_down must be positive")
        if self.row_anchor not in ("fov_up", "fov_down"):
            raise ValueError(f"row_anchor must be 'fov_up' or 'fov_down', got {self.row_anchor!r}")

    @property
    def fov(self) -> float:
        return self.fov_up + self.fov_down

    @property
    def row_offset(self) -> float:
        return self.fov_up if self.row_anchor == "fov_up" else self.fov_down

    def row_elevation(self, v):
        """Elevation (radians) of raster row coordinate ``v`` (inverse of the row map)."""
        return (1.0 - np.asarray(v, dtype=np.float64) / self.height) * self.fov - self.row_offset

    def column_azimuth(self, u):
        return math.pi * (1.0 - 2.0 * np.asarray(u, dtype=np.float64) / self.width)


@dataclass
class RangeImage:
    """Six-channel raster (range, x, y, z, remission, valid) plus index maps.

    ``point_pixel`` is None once range-view augmentation has detached the
    raster from its source cloud.
    """
    channels: np.ndarray                  # (6, H, W) float32
    pixel_point: np.ndarray               # (H, W) int64, EMPTY where invalid
    point_pixel: np.ndarray | None        # (N, 2) int64 rows of (v, u)
    labels: np.ndarray | None = None      # (H, W) uint8

    @property
    def shape(self):
        return self.channels.shape[1:]

    @property
    def valid(self) -> np.ndarray:
        return self.channels[5] > 0

    @property
    def range(self) -> np.ndarray:
        return self.channels[0]


def spherical_coords(point):
    """(theta, phi, r) of one point: azimuth atan2(y, x), elevation asin(z/r)."""
    x, y, z = (float(c) for c in point)
    r = math.sqrt(x * x + y * y + z * z)
    if r == 0.0:
        raise ValueError("zero-range point has no spherical coordinates")
    return math.atan2(y, x), math.asin(max(-1.0, min(1.0, z / r))), r


def project_point(point, cfg: ProjectionConfig):
    """Column u and row v of one point, clamped into the raster."""
    theta, phi, _ = spherical_coords(point)
    u = math.floor(0.5 * (1.0 - theta / math.pi) * cfg.width)
    v = math.floor((1.0 - (phi + cfg.row_offset) / cfg.fov) * cfg.height)
    return min(max(u, 0), cfg.width - 1), min(max(v, 0), cfg.height - 1)


def project_points(xyz, cfg: ProjectionConfig):
    """Vectorized :func:`project_point`; returns (u, v, r) with r in float64."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    r = np.sqrt(x * x + y * y + z * z)
    if np.any(r == 0):
        raise ValueError("zero-range point has no spherical coordinates")
    theta = np.arctan2(y, x)
    phi = np.arcsin(np.clip(z / r, -1.0, 1.0))
    u = np.floor(0.5 * (1.0 - theta / math.pi) * cfg.width)
    v = np.floor((1.0 - (phi + cfg.row_offset) / cfg.fov) * cfg.height)
    u = np.clip(u, 0, cfg.width - 1).astype(np.int64)
    v = np.clip(v, 0, cfg.height - 1).astype(np.int64)
    return u, v, r


def rasterize(pc: PointCloud, cfg: ProjectionConfig) -> RangeImage:
    """Project every point; each pixel keeps its minimum-range point.

    Equal ranges go to the lower point index. Unfilled pixels are zero in all
    channels and IGNORE in the label raster.
    """
    H, W = cfg.height, cfg.width
    channels = np.zeros((6, H, W), dtype=np.float32)
    pixel_point = np.full((H, W), EMPTY, dtype=np.int64)
    labels = None if pc.labels is None else np.full((H, W), IGNORE, dtype=np.uint8)
    n = len(pc)
    if n == 0:
        return RangeImage(channels, pixel_point, np.zeros((0, 2), dtype=np.int64), labels)

    u, v, r = project_points(pc.xyz, cfg)
    pix = v * W + u
    order = np.lexsort((np.arange(n), r))
    first = np.unique(pix[order], return_index=True)[1]
    win = order[first]
    wv, wu = v[win], u[win]
    pixel_point[wv, wu] = win
    channels[0, wv, wu] = r[win]
    channels[1:4, wv, wu] = pc.xyz[win].T
    channels[4, wv, wu] = pc.remission[win]
    channels[5, wv, wu] = 1.0
    if labels is not None:
        labels[wv, wu] = pc.labels[win]
    return RangeImage(channels, pixel_point, np.stack([v, u], axis=1), labels)


def knn_vote(label_img, range_img, valid, pv, pu, pr, k: int = 7, window: int = 7,
             chunk: int = 65536) -> np.ndarray:
    """Majority vote over the k range-nearest valid pixels around each query.

    Candidates are the valid pixels in the window x window box around
    (pv, pu), clipped at the raster border, ranked by |range - pr|. Equal
    distances go to the query's own pixel first, then scanline order; without
    that, a flat ground row (constant range) would hand a point its left
    neighbour's label even at k=1. Among labels tied for the most votes, the one whose
    first candidate ranks highest wins. Queries with no candidate take the
    pixel label at (pv, pu) when that pixel is valid, else IGNORE.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd number")
    label_img = np.asarray(label_img)
    H, W = label_img.shape
    if np.shape(range_img) != (H, W) or np.shape(valid) != (H, W):
        raise ValueError("label, range and validity rasters differ in shape")
    rng_img = np.asarray(range_img, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    pv, pu = np.asarray(pv, dtype=np.int64), np.asarray(pu, dtype=np.int64)
    pr = np.asarray(pr, dtype=np.float64)

    half = window // 2
    dv, du = np.meshgrid(np.arange(-half, half + 1), np.arange(-half, half + 1), indexing="ij")
    dv, du = dv.reshape(-1), du.reshape(-1)
    centre = (window * window) // 2
    # own pixel first, the rest in scanline order
    first = np.r_[centre, np.arange(centre), np.arange(centre + 1, window * window)]
    dv, du = dv[first], du[first]
    kk = min(k, window * window)
    rank = np.arange(kk)
    out = np.empty(len(pv), dtype=np.int64)

    for s in range(0, len(pv), chunk):
        qv, qu, qr = pv[s:s + chunk], pu[s:s + chunk], pr[s:s + chunk]
        cv = qv[:, None] + dv
        cu = qu[:, None] + du
        inside = (cv >= 0) & (cv < H) & (cu >= 0) & (cu < W)
        cv, cu = np.clip(cv, 0, H - 1), np.clip(cu, 0, W - 1)
        ok = inside & valid[cv, cu]
        diff = np.abs(rng_img[cv, cu] - qr[:, None])
        diff[~ok] = np.inf
        order = np.argsort(diff, axis=1, kind="stable")[:, :kk]
        sel_ok = np.take_along_axis(ok, order, axis=1)
        lab = np.take_along_axis(label_img[cv, cu].astype(np.int64), order, axis=1)
        votes = ((lab[:, :, None] == lab[:, None, :]) & sel_ok[:, None, :]).sum(axis=2)
        votes[~sel_ok] = -1
        best = np.argmax(votes * (kk + 1) - rank, axis=1)
        res = lab[np.arange(len(qv)), best]
        empty = ~sel_ok[:, 0]
        if empty.any():
            own_valid = valid[qv[empty], qu[empty]]
            res[empty] = np.where(own_valid, label_img[qv[empty], qu[empty]], IGNORE)
        out[s:s + chunk] = res
    return out


def backproject_labels(img_labels, img: RangeImage, pc: PointCloud, k: int = 7, window: int = 7) -> np.ndarray:
    """Assign every point of ``pc`` a label from the predicted raster ``img_labels``."""
    img_labels = np.asarray(img_labels)
    if img_labels.shape != img.shape:
        raise ValueError(f"label raster {img_labels.shape} does not match range image {img.shape}")
    if img.point_pixel is None or len(img.point_pixel) != len(pc):
        raise ValueError("range image has no point mapping for this cloud")
    x, y, z = (pc.xyz[:, i].astype(np.float64) for i in range(3))
    # rounded like the stored range channel so a point's own pixel is at distance 0
    pr = np.sqrt(x * x + y * y + z * z).astype(np.float32)
    return knn_vote(img_labels, img.range, img.valid, img.point_pixel[:, 0], img.point_pixel[:, 1],
                    pr, k=k, window=window)
