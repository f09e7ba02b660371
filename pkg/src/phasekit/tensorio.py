"""Minimal binary tensor container (.prt files).

Layout: 4 magic bytes ``PRT1``, three little-endian uint32 (height,
width, channels), then height*width*channels little-endian IEEE-754
float32 values in row-major order. Single-channel arrays round-trip as
2-D; multi-channel as H x W x C. The format is deliberately trivial so
any language can parse it.
"""

import struct

import numpy as np

from .errors import StorageError

MAGIC = b"PRT1"
_HEADER = struct.Struct("<III")


def write_tensor(path, array):
    """Write a 2-D or 3-D float array to ``path`` in .prt format."""
    arr = np.asarray(array, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise StorageError(f"cannot serialize array of rank {np.ndim(array)} to {path}")
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(h, w, c))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_tensor(path):
    """Read a .prt file; returns float32 array of shape (H, W) or (H, W, C)."""
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != MAGIC:
                raise StorageError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
            header = fh.read(_HEADER.size)
            if len(header) != _HEADER.size:
                raise StorageError(f"{path}: truncated header")
            h, w, c = _HEADER.unpack(header)
            payload = fh.read(h * w * c * 4)
    except OSError as exc:
        if isinstance(exc, StorageError):
            raise
        raise StorageError(f"{path}: {exc}") from exc
    if len(payload) != h * w * c * 4:
        raise StorageError(f"{path}: truncated payload ({len(payload)} of {h * w * c * 4} bytes)")
    arr = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
    if c == 1:
        arr = arr[:, :, 0]
    return np.array(arr)  # owned, writable copy
