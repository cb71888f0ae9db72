"""DTM binary container for dense maps.

Layout: magic ``DTM1``, little-endian u32 height, u32 width, u32 channels,
u8 dtype tag (0 = 32-bit float), 3 padding bytes, then a row-major
channel-interleaved payload. NaN is forbidden; undefined pixels carry the
role sentinel (0 for depth, -1 for saliency/mask/confidence).
"""

from __future__ import annotations

import struct

import numpy as np

from .maps import DenseMap

MAGIC = b"DTM1"
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sIIIB3x")


def write_dtm(path, array: np.ndarray) -> None:
    """Write an (H, W) or (H, W, C) float array."""
    arr = np.asarray(array, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"DTM expects 2-D or 3-D data, got shape {arr.shape}")
    if np.isnan(arr).any():
        raise ValueError("NaN is forbidden in DTM payloads")
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, h, w, c, DTYPE_F32))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_dtm(path) -> np.ndarray:
    """Read a DTM file; single-channel data comes back as (H, W)."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise ValueError(f"truncated DTM header in {path}")
        magic, h, w, c, dtype_tag = _HEADER.unpack(header)
        if magic != MAGIC:
            raise ValueError(f"bad DTM magic {magic!r} in {path}")
        if dtype_tag != DTYPE_F32:
            raise ValueError(f"unsupported DTM dtype tag {dtype_tag}")
        payload = fh.read()
    expected = h * w * c * 4
    if len(payload) != expected:
        raise ValueError(f"DTM payload size {len(payload)} != expected {expected}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
    if np.isnan(arr).any():
        raise ValueError("NaN is forbidden in DTM payloads")
    return arr[:, :, 0].copy() if c == 1 else arr.copy()


def write_dense_map(path, dense: DenseMap) -> None:
    write_dtm(path, dense.values)


def read_dense_map(path, role: str) -> DenseMap:
    return DenseMap(read_dtm(path), role)
