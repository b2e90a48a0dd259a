"""Tensor file formats for feature ingestion.

Binary format: little-endian, magic ``GRNT``, u32 rank, u32 dims[rank],
then a float32 payload in row-major order.  A plain CSV fallback covers
2-D matrices.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"GRNT"


def write_tensor(path, array) -> None:
    """Write an array in the GRNT binary format (float32 payload)."""
    arr = np.ascontiguousarray(array, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.astype("<f4").tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    """Read a GRNT file back as a float64 array."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (rank,) = struct.unpack("<I", fh.read(4))
        dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        payload = fh.read(4 * count)
        if len(payload) != 4 * count:
            raise ValueError(f"{path}: truncated payload, expected {4 * count} bytes")
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after payload")
    return np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)


def write_tensor_csv(path, matrix) -> None:
    """CSV fallback for 2-D matrices, one row per line."""
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"CSV tensor fallback is 2-D only, got shape {arr.shape}")
    with open(path, "w") as fh:
        for row in arr:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def read_tensor_csv(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    if not rows:
        raise ValueError(f"{path}: empty CSV tensor")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError(f"{path}: ragged CSV rows")
    return np.asarray(rows, dtype=np.float64)
