"""Portable tensor file format.

Layout: ``b"TNSR"``, little-endian u32 ndim, ndim little-endian u32 dims,
then the row-major little-endian float32 payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNSR"


class FormatError(ValueError):
    """Malformed tensor bytes; ``offset`` is where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def encode(array) -> bytes:
    arr = np.ascontiguousarray(np.asarray(array), dtype="<f4")
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def decode(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one tensor starting at ``offset``; returns ``(array, end_offset)``."""
    if buf[offset : offset + 4] != MAGIC:
        raise FormatError("bad magic, expected b'TNSR'", offset)
    pos = offset + 4
    if len(buf) < pos + 4:
        raise FormatError("truncated ndim field", pos)
    (ndim,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    if len(buf) < pos + 4 * ndim:
        raise FormatError("truncated dims", pos)
    dims = struct.unpack_from(f"<{ndim}I", buf, pos)
    pos += 4 * ndim
    count = int(np.prod(dims)) if ndim else 1
    nbytes = 4 * count
    if len(buf) < pos + nbytes:
        raise FormatError(f"payload needs {nbytes} bytes, only {len(buf) - pos} left", pos)
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float32)
    return arr, pos + nbytes


def save(path, array) -> None:
    Path(path).write_bytes(encode(array))


def load(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = decode(buf)
    if end != len(buf):
        raise FormatError("trailing bytes after payload", end)
    return arr


def save_pgm(path, values) -> None:
    """8-bit binary PGM preview, scaled by 255 / max."""
    v = np.asarray(values, dtype=np.float64)
    top = v.max() if v.size else 0.0
    scaled = np.zeros_like(v) if top <= 0 else np.clip(v * (255.0 / top), 0, 255)
    pix = np.round(scaled).astype(np.uint8)
    h, w = pix.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes())
