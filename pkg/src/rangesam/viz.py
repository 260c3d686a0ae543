"""Binary PPM (P6) output for range and label rasters."""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .kitti import NUM_CLASSES


def load_palette(path=None) -> np.ndarray:
    """(19, 3) uint8 colors from the palette fixture ("id r g b" per line)."""
    if path is None:
        text = resources.files("rangesam.data").joinpath("palette.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    pal = np.zeros((NUM_CLASSES, 3), dtype=np.uint8)
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].split()
        if not line:
            continue
        if len(line) != 4:
            raise ValueError(f"palette line {lineno}: expected 'id r g b'")
        cid, *rgb = (int(t) for t in line)
        pal[cid] = rgb
        seen.add(cid)
    if seen != set(range(NUM_CLASSES)):
        raise ValueError("palette must define every class id")
    return pal


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a P6 image")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    return np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8).reshape(h, w, 3)


def range_to_rgb(rng: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Grey ramp, near = bright; valid pixels are never pure black."""
    out = np.zeros(rng.shape + (3,), dtype=np.uint8)
    if valid.any():
        r = rng[valid].astype(np.float64)
        top = r.max()
        level = 255 - np.floor(254 * r / top).astype(np.int64) if top > 0 else np.full(r.shape, 255)
        out[valid] = np.clip(level, 1, 255)[:, None]
    return out


def labels_to_rgb(labels: np.ndarray, valid: np.ndarray, palette=None) -> np.ndarray:
    pal = load_palette() if palette is None else palette
    out = np.zeros(labels.shape + (3,), dtype=np.uint8)
    known = valid & (labels < len(pal))
    out[known] = pal[labels[known]]
    return out
