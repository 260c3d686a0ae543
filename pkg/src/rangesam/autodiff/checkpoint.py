"""Flat binary parameter archive.

Layout (all integers little-endian uint32)::

    magic  b"RSAMCKPT"
    version
    meta_len, meta (UTF-8 JSON)
    count
    count x record:
        name_len, name (UTF-8), ndim, dims[ndim], float32 payload (little-endian)
"""
from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"RSAMCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors, meta=None) -> None:
    """Write ``tensors`` (iterable of (name, array)) to ``path``."""
    items = list(tensors)
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        raise CheckpointError("duplicate tensor names")
    blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(items)))
        for name, arr in items:
            arr = np.asarray(arr, dtype="<f4")
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path):
    """Return (dict name -> float32 array, meta dict), preserving record order."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    off = 8
    version, meta_len = struct.unpack_from("<II", data, off)
    off += 8
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(data[off:off + meta_len].decode("utf-8"))
    off += meta_len
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            name = data[off:off + n].decode("utf-8")
            off += n
            (ndim,) = struct.unpack_from("<I", data, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            nbytes = 4 * int(np.prod(shape, dtype=np.int64))
            if off + nbytes > len(data):
                raise CheckpointError(f"{path}: truncated record {name!r}")
            out[name] = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=off).reshape(shape).copy()
            off += nbytes
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    return out, meta
