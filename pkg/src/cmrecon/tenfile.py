"""Binary tensor container used for datasets and checkpoints.

Layout: 4-byte magic b"CMRT", uint16 little-endian version (currently 1),
uint8 rank, then rank uint32 little-endian dims, then the payload as
little-endian float64 in row-major order.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CMRT"
VERSION = 1


class TenFormatError(ValueError):
    pass


def save_ten(path, arr: np.ndarray) -> None:
    # check rank before ascontiguousarray, which silently promotes 0-d to 1-d
    if np.asarray(arr).ndim == 0 or np.asarray(arr).ndim > 255:
        raise TenFormatError(f"rank must be in [1, 255], got {np.asarray(arr).ndim}")
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    if any(d > 0xFFFFFFFF for d in arr.shape):
        raise TenFormatError(f"dims exceed uint32 range: {arr.shape}")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HB", VERSION, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.astype("<f8", copy=False).tobytes())


def load_ten(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 7:
        raise TenFormatError(f"{path}: truncated header")
    if raw[:4] != MAGIC:
        raise TenFormatError(f"{path}: bad magic {raw[:4]!r}")
    version, rank = struct.unpack_from("<HB", raw, 4)
    if version != VERSION:
        raise TenFormatError(f"{path}: unsupported version {version}")
    off = 7
    if len(raw) < off + 4 * rank:
        raise TenFormatError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{rank}I", raw, off)
    off += 4 * rank
    count = 1
    for d in dims:
        count *= d
    expected = off + 8 * count
    if len(raw) != expected:
        raise TenFormatError(f"{path}: payload is {len(raw) - off} bytes, "
                             f"expected {8 * count}")
    arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off)
    return arr.reshape(dims).astype(np.float64)
