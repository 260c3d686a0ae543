"""Procedural LiDAR scenes: ground, boxes, poles and building walls, ray-cast.

Rays go through raster pixel centres, so every pixel receives at most one
point and rasterization is single-occupancy by construction. Labels use the
SemanticKITTI train ids.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kitti import PointCloud
from .projection import ProjectionConfig

CAR, ROAD, SIDEWALK, BUILDING, VEGETATION, POLE = 0, 8, 10, 12, 14, 17

REMISSION = {CAR: 0.35, ROAD: 0.15, SIDEWALK: 0.25, BUILDING: 0.45, VEGETATION: 0.6, POLE: 0.3}


@dataclass
class SceneConfig:
    sensor_height: float = 1.73
    road_half_width: float = 4.0
    max_range: float = 60.0
    n_cars: tuple = (3, 6)
    n_poles: tuple = (3, 6)
    n_trees: tuple = (1, 4)
    spread: float = 15.0  # objects placed within +-spread metres along x
    wall_distance: tuple = (9.0, 16.0)


def pixel_rays(cfg: ProjectionConfig, jitter=None, rng=None) -> np.ndarray:
    """Unit direction per pixel, shape (H*W, 3), row-major over (v, u).

    ``jitter`` in [0, 0.5) offsets each ray inside its pixel (still one ray
    per pixel, so occupancy stays single).
    """
    v, u = np.meshgrid(np.arange(cfg.height) + 0.5, np.arange(cfg.width) + 0.5, indexing="ij")
    if jitter:
        v = v + rng.uniform(-jitter, jitter, size=v.shape)
        u = u + rng.uniform(-jitter, jitter, size=u.shape)
    phi = cfg.row_elevation(v).ravel()
    theta = cfg.column_azimuth(u).ravel()
    return np.stack([np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta), np.sin(phi)], axis=1)


def _hit_ground(d, h):
    t = np.full(len(d), np.inf)
    down = d[:, 2] < -1e-9
    t[down] = -h / d[down, 2]
    return t


def _hit_box(d, lo, hi):
    """Slab test for a ray from the origin against an axis-aligned box."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = lo[None] * inv
        t2 = hi[None] * inv
    tmin = np.nanmax(np.minimum(t1, t2), axis=1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=1)
    hit = (tmax >= tmin) & (tmax > 0)
    t = np.where(tmin > 0, tmin, np.inf)
    return np.where(hit, t, np.inf)


def _hit_cylinder(d, cx, cy, r, z0, z1):
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = -2 * (d[:, 0] * cx + d[:, 1] * cy)
    c = cx * cx + cy * cy - r * r
    disc = b * b - 4 * a * c
    t = np.full(len(d), np.inf)
    ok = (disc >= 0) & (a > 1e-12)
    t_hit = (-b[ok] - np.sqrt(disc[ok])) / (2 * a[ok])
    z = t_hit * d[ok, 2]
    good = (t_hit > 0) & (z >= z0) & (z <= z1)
    idx = np.nonzero(ok)[0][good]
    t[idx] = t_hit[good]
    return t


def synthetic_scene(rng, cfg: ProjectionConfig, scene: SceneConfig | None = None, jitter=None) -> PointCloud:
    """One random street scene ray-cast into ``cfg``'s raster."""
    scene = scene or SceneConfig()
    h = scene.sensor_height
    d = pixel_rays(cfg, jitter, rng)
    best_t = np.full(len(d), np.inf)
    label = np.zeros(len(d), dtype=np.uint8)

    def offer(t, lab):
        nonlocal best_t
        if np.ndim(lab) == 0:
            lab = np.full(len(d), lab, dtype=np.uint8)
        better = t < best_t
        best_t = np.where(better, t, best_t)
        label[better] = lab[better]

    tg = _hit_ground(d, h)
    gy = np.abs(tg * d[:, 1])
    offer(tg, np.where(gy < scene.road_half_width, ROAD, SIDEWALK).astype(np.uint8))

    # building walls on both sides, each a long thin box
    for side in (-1, 1):
        y0 = side * rng.uniform(*scene.wall_distance)
        lo = np.array([-60.0, min(y0, y0 + side * 2.0), -h])
        hi = np.array([60.0, max(y0, y0 + side * 2.0), rng.uniform(3.0, 12.0)])
        offer(_hit_box(d, lo, hi), BUILDING)

    for _ in range(rng.integers(*scene.n_cars, endpoint=True)):
        cx = rng.uniform(-scene.spread, scene.spread)
        cy = rng.choice([-1, 1]) * rng.uniform(1.5, scene.road_half_width - 1.0)
        if abs(cx) < 3 and abs(cy) < 2:
            cx += 6.0
        length, width, height = rng.uniform(3.8, 4.8), rng.uniform(1.6, 2.0), rng.uniform(1.4, 1.8)
        lo = np.array([cx - length / 2, cy - width / 2, -h])
        hi = np.array([cx + length / 2, cy + width / 2, -h + height])
        offer(_hit_box(d, lo, hi), CAR)

    for _ in range(rng.integers(*scene.n_poles, endpoint=True)):
        cx = rng.uniform(-scene.spread, scene.spread)
        cy = rng.choice([-1, 1]) * rng.uniform(scene.road_half_width + 0.5, scene.wall_distance[0] - 1.0)
        offer(_hit_cylinder(d, cx, cy, rng.uniform(0.2, 0.4), -h, rng.uniform(3.0, 7.0)), POLE)

    for _ in range(rng.integers(*scene.n_trees, endpoint=True)):
        cx = rng.uniform(-2 * scene.spread, 2 * scene.spread)
        cy = rng.choice([-1, 1]) * rng.uniform(scene.road_half_width + 1.0, scene.wall_distance[0] - 1.5)
        r = rng.uniform(1.0, 2.0)
        lo = np.array([cx - r, cy - r, -h + 1.0])
        hi = np.array([cx + r, cy + r, -h + 1.0 + rng.uniform(2.0, 4.0)])
        offer(_hit_box(d, lo, hi), VEGETATION)

    hit = np.isfinite(best_t) & (best_t <= scene.max_range)
    xyz = (d[hit] * best_t[hit, None]).astype(np.float32)
    lab = label[hit]
    base = np.array([REMISSION[int(c)] for c in lab], dtype=np.float32)
    remission = np.clip(base + rng.normal(0, 0.03, size=len(lab)), 0, 1).astype(np.float32)
    return PointCloud(xyz, remission, lab)


class SyntheticDataset:
    """Fixed, indexable set of procedural scenes; scene i depends only on (seed, i)."""

    def __init__(self, size: int, cfg: ProjectionConfig, seed: int = 0, scene: SceneConfig | None = None):
        self.size, self.cfg, self.seed, self.scene = size, cfg, seed, scene
        self._cache = {}

    def __len__(self):
        return self.size

    def __getitem__(self, i) -> PointCloud:
        if not 0 <= i < self.size:
            raise IndexError(i)
        if i not in self._cache:
            self._cache[i] = synthetic_scene(np.random.default_rng([self.seed, i]), self.cfg, self.scene)
        pc = self._cache[i]
        return PointCloud(pc.xyz.copy(), pc.remission.copy(), pc.labels.copy())
