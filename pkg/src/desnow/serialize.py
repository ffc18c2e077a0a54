"""Binary file formats for raw tensors and model checkpoints.

Two little-endian formats:

``.dsnt`` single tensor dump
    magic ``DSNT`` | u32 version=1 | u32 rank | u32 extents[rank] |
    float32 payload, row-major.

``.dsnw`` named weight collection (checkpoint)
    magic ``DSNW`` | u32 version=1 | u32 count | then per entry:
    u16 name length | UTF-8 name | u32 rank | u32 extents[rank] |
    float32 payload, row-major.

Entries keep their insertion order, so save -> load -> save is bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

DSNT_MAGIC = b"DSNT"
DSNW_MAGIC = b"DSNW"
FORMAT_VERSION = 1


def save_dsnt(path, array: np.ndarray):
    """Write a float tensor dump. Data is stored as float32."""
    arr = np.ascontiguousarray(array, dtype=np.float32)
    with open(path, "wb") as f:
        f.write(DSNT_MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.astype("<f4", copy=False).tobytes())


def load_dsnt(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != DSNT_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {DSNT_MAGIC!r}")
        version, rank = struct.unpack("<II", f.read(8))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        payload = f.read(4 * count)
        if len(payload) != 4 * count:
            raise ValueError(f"{path}: truncated payload")
        return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)


def save_weights(path, named: "dict[str, np.ndarray] | list[tuple[str, np.ndarray]]"):
    """Write a named weight collection, preserving iteration order."""
    items = list(named.items()) if isinstance(named, dict) else list(named)
    with open(path, "wb") as f:
        f.write(DSNW_MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(items)))
        for name, array in items:
            arr = np.ascontiguousarray(array, dtype=np.float32)
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise ValueError(f"parameter name too long: {name!r}")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f4", copy=False).tobytes())


def load_weights(path) -> "dict[str, np.ndarray]":
    """Read a checkpoint back as an ordered name -> float32 array map."""
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != DSNW_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {DSNW_MAGIC!r}")
        version, count = struct.unpack("<II", f.read(8))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
            n = int(np.prod(shape)) if rank else 1
            payload = f.read(4 * n)
            if len(payload) != 4 * n:
                raise ValueError(f"{path}: truncated entry {name!r}")
            out[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    return out
