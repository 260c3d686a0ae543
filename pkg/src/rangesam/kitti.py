"""SemanticKITTI scan/label ingestion and split enumeration."""
from __future__ import annotations

import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

IGNORE = 255
NUM_CLASSES = 19
CLASS_NAMES = ("car", "bicy", "moto", "truc", "o.veh", "ped", "b.list", "m.list", "road", "park",
               "walk", "o.gro", "build", "fenc", "veg", "trun", "terr", "pole", "sign")

SPLITS = {
    "train": ("00", "01", "02", "03", "04", "05", "06", "07", "09", "10"),
    "val": ("08",),
    "test": tuple(f"{i:02d}" for i in range(11, 22)),
}
DATA_ROOT_ENV = "RANGESAM_DATA_ROOT"


class TruncatedFileError(ValueError):
    pass


@dataclass
class PointCloud:
    xyz: np.ndarray                      # (N, 3) float32 meters
    remission: np.ndarray                # (N,) float32 in [0, 1]
    labels: np.ndarray | None = None     # (N,) uint8 train ids or IGNORE

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float32).reshape(-1, 3)
        self.remission = np.asarray(self.remission, dtype=np.float32).reshape(-1)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
            if len(self.labels) != len(self.xyz):
                raise ValueError("labels and points differ in length")
        if len(self.remission) != len(self.xyz):
            raise ValueError("remission and points differ in length")

    def __len__(self):
        return len(self.xyz)

    def subset(self, idx) -> "PointCloud":
        return PointCloud(self.xyz[idx], self.remission[idx],
                          None if self.labels is None else self.labels[idx])


@dataclass
class LabelRemap:
    raw_to_train: dict
    train_to_name: dict

    def __post_init__(self):
        if len(self.train_to_name) != NUM_CLASSES:
            raise ValueError(f"expected {NUM_CLASSES} class names, got {len(self.train_to_name)}")
        for raw, train in self.raw_to_train.items():
            if not (0 <= raw <= 0xFFFF):
                raise ValueError(f"raw id {raw} outside 16 bits")
            if train != IGNORE and not 0 <= train < NUM_CLASSES:
                raise ValueError(f"train id {train} for raw id {raw} out of range")
        self._lut = np.full(1 << 16, IGNORE, dtype=np.uint8)
        for raw, train in self.raw_to_train.items():
            self._lut[raw] = train

    def __call__(self, raw_ids) -> np.ndarray:
        return self._lut[np.asarray(raw_ids, dtype=np.uint32) & 0xFFFF]

    @classmethod
    def from_file(cls, path) -> "LabelRemap":
        return cls(parse_remap(Path(path).read_text(encoding="utf-8"), str(path)), dict(enumerate(CLASS_NAMES)))

    @classmethod
    def default(cls) -> "LabelRemap":
        text = resources.files("rangesam.data").joinpath("semantic_kitti_remap.txt").read_text(encoding="utf-8")
        return cls(parse_remap(text, "semantic_kitti_remap.txt"), dict(enumerate(CLASS_NAMES)))


def parse_remap(text: str, source: str = "<remap>") -> dict:
    """Parse "raw_id train_id" lines; '#' starts a comment."""
    table = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{source}:{lineno}: expected 'raw_id train_id', got {line!r}")
        try:
            raw, train = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValueError(f"{source}:{lineno}: non-integer entry {line!r}") from None
        table[raw] = train
    return table


def read_scan(path) -> PointCloud:
    """Read a velodyne .bin file (little-endian float32 x, y, z, remission).

    Points with non-finite coordinates or zero range are dropped and
    remission is clamped to [0, 1].
    """
    path = Path(path)
    nbytes = path.stat().st_size
    if nbytes % 16:
        raise TruncatedFileError(f"{path}: {nbytes} bytes is not a multiple of 16")
    raw = np.fromfile(path, dtype="<f4").reshape(-1, 4)
    xyz = raw[:, :3]
    keep = np.isfinite(xyz).all(axis=1) & (np.einsum("ij,ij->i", xyz, xyz) > 0)
    rem = np.nan_to_num(raw[keep, 3], nan=0.0)
    return PointCloud(xyz[keep], np.clip(rem, 0.0, 1.0))


def read_labels(path, remap: LabelRemap, n_points: int) -> np.ndarray:
    """Read a .label file and map the lower 16 bits through ``remap``."""
    path = Path(path)
    nbytes = path.stat().st_size
    if nbytes != 4 * n_points:
        raise ValueError(f"{path}: {nbytes // 4} labels for {n_points} points")
    return remap(np.fromfile(path, dtype="<u4"))


def read_labeled_scan(scan_path, label_path, remap: LabelRemap) -> PointCloud:
    """Read a scan and its labels, applying the same point filter to both."""
    scan_path = Path(scan_path)
    nbytes = scan_path.stat().st_size
    if nbytes % 16:
        raise TruncatedFileError(f"{scan_path}: {nbytes} bytes is not a multiple of 16")
    raw = np.fromfile(scan_path, dtype="<f4").reshape(-1, 4)
    labels = read_labels(label_path, remap, len(raw))
    xyz = raw[:, :3]
    keep = np.isfinite(xyz).all(axis=1) & (np.einsum("ij,ij->i", xyz, xyz) > 0)
    rem = np.clip(np.nan_to_num(raw[keep, 3], nan=0.0), 0.0, 1.0)
    return PointCloud(xyz[keep], rem, labels[keep])


def write_scan(path, pc: PointCloud) -> None:
    raw = np.concatenate([pc.xyz, pc.remission[:, None]], axis=1).astype("<f4")
    raw.tofile(path)


def write_labels(path, raw_ids) -> None:
    np.asarray(raw_ids, dtype="<u4").tofile(path)


def sequence_split(root, split: str) -> list:
    """List (scan_path, label_path or None) for ``split`` under root/sequences.

    Sequences absent from ``root`` are skipped; test entries carry no label
    path, and train/val entries get one only when the file exists.
    """
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}; choose from {sorted(SPLITS)}")
    seq_root = Path(root) / "sequences"
    if not seq_root.is_dir():
        raise FileNotFoundError(f"{seq_root}: no sequences directory")
    entries = []
    for seq in SPLITS[split]:
        velo = seq_root / seq / "velodyne"
        if not velo.is_dir():
            continue
        for scan in sorted(velo.glob("*.bin")):
            label = None
            if split != "test":
                cand = seq_root / seq / "labels" / (scan.stem + ".label")
                label = cand if cand.exists() else None
            entries.append((scan, label))
    return entries


def data_root(explicit=None):
    """Resolve the dataset root: explicit value, else $RANGESAM_DATA_ROOT."""
    root = explicit or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise FileNotFoundError(f"no dataset root given and ${DATA_ROOT_ENV} is unset")
    return Path(root)


class KittiDataset:
    """Indexable view over one split, yielding labeled point clouds."""

    def __init__(self, root, split: str, remap: LabelRemap | None = None):
        self.entries = sequence_split(root, split)
        self.remap = remap or LabelRemap.default()

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i) -> PointCloud:
        scan, label = self.entries[i]
        if label is None:
            return read_scan(scan)
        return read_labeled_scan(scan, label, self.remap)
