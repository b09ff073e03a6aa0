"""Plain-numpy image helpers (no gradient tracking)."""

from __future__ import annotations

import numpy as np


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centres, edge-clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a (C, H, W) array. Samples only pixels of ``img``."""
    c, h, w = img.shape
    if (out_h, out_w) == (h, w):
        return img.copy()
    y0, y1, fy = _axis_weights(h, out_h)
    x0, x1, fx = _axis_weights(w, out_w)
    fy = fy.astype(img.dtype)[None, :, None]
    fx = fx.astype(img.dtype)[None, None, :]
    rows = img[:, y0, :] * (1 - fy) + img[:, y1, :] * fy
    return rows[:, :, x0] * (1 - fx) + rows[:, :, x1] * fx


def pad_to_multiple(img: np.ndarray, multiple: int, mode: str = "reflect") -> np.ndarray:
    """Pad bottom/right of a (C, H, W) array so H and W are multiples of ``multiple``."""
    _, h, w = img.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return img
    if mode == "reflect" and (ph >= h or pw >= w):
        mode = "symmetric" if ph <= h and pw <= w else "edge"
    return np.pad(img, ((0, 0), (0, ph), (0, pw)), mode=mode)
