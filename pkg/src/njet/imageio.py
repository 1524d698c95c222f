"""PGM/PPM reading and writing via Pillow."""

from __future__ import annotations

import numpy as np
from PIL import Image


def read_image(path) -> np.ndarray:
    """Load a PGM or PPM as float64 ``[C, H, W]`` in [0, 1]."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if len(im.getbands()) >= 3 else "L")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1)


def to_uint8(a, lo=None, hi=None) -> np.ndarray:
    """Linearly map ``[lo, hi]`` (default: the array range) to 0..255."""
    a = np.asarray(a, dtype=np.float64)
    lo = a.min() if lo is None else lo
    hi = a.max() if hi is None else hi
    if hi <= lo:
        return np.full(a.shape, 128 if lo != 0 else 0, dtype=np.uint8)
    return np.clip(np.rint((a - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)


def write_image(path, a, lo=None, hi=None):
    """Write ``[H, W]`` or ``[1, H, W]`` as PGM and ``[3, H, W]`` as PPM."""
    a = np.asarray(a)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim == 3:
        if a.shape[0] != 3:
            raise ValueError(f"expected 1 or 3 channels, got {a.shape[0]}")
        a = a.transpose(1, 2, 0)
    elif a.ndim != 2:
        raise ValueError(f"expected a 2-D or 3-D array, got shape {a.shape}")
    Image.fromarray(to_uint8(a, lo, hi)).save(path, format="PPM")
