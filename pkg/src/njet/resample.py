"""Sigma-driven safe subsampling and separable image resampling.

Both resamplers are linear and separable, so they are expressed as a
pair of dense 1-D interpolation matrices applied along H and W. That
makes their adjoints (needed for backprop) a transpose away.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SubsampleRule:
    r: float = 4.0

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"safe-subsampling r must be positive, got {self.r}")


def safe_size(s: int, sigma: float, rule: SubsampleRule | float = SubsampleRule()) -> int:
    """New map size s * (1/2)**(sigma / r), rounded half up, at least 1."""
    r = rule.r if isinstance(rule, SubsampleRule) else float(rule)
    if s < 1 or not sigma > 0 or not r > 0:
        raise ValueError(f"need s >= 1, sigma > 0, r > 0; got {s}, {sigma}, {r}")
    return max(1, math.floor(s * 0.5 ** (sigma / r) + 0.5))


def area_matrix(n_src: int, n_dst: int) -> np.ndarray:
    """[n_dst, n_src] weights averaging each source interval covered by a target pixel.

    Target pixel t covers source coordinates [t*n_src/n_dst, (t+1)*n_src/n_dst).
    """
    if n_dst > n_src or n_dst < 1:
        raise ValueError(f"area averaging needs 1 <= target <= source, got {n_dst} from {n_src}")
    scale = n_src / n_dst
    edges = np.arange(n_dst + 1) * scale
    lo, hi = edges[:-1, None], edges[1:, None]
    px = np.arange(n_src)[None, :]
    overlap = np.clip(np.minimum(hi, px + 1) - np.maximum(lo, px), 0.0, None)
    return overlap / scale


def bilinear_matrix(n_src: int, n_dst: int) -> np.ndarray:
    """[n_dst, n_src] linear interpolation weights with half-pixel centres and edge clamping."""
    if n_dst < 1 or n_src < 1:
        raise ValueError(f"degenerate resize {n_src} -> {n_dst}")
    scale = n_src / n_dst
    src = (np.arange(n_dst) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_src - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_src - 1)
    frac = src - i0
    m = np.zeros((n_dst, n_src))
    rows = np.arange(n_dst)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def _apply(x: np.ndarray, mh: np.ndarray, mw: np.ndarray) -> np.ndarray:
    mh = mh.astype(x.dtype, copy=False)
    mw = mw.astype(x.dtype, copy=False)
    return np.matmul(np.matmul(mh, x), mw.T)


def downsample(x: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Area-average a [..., H, W] map down to [..., target_h, target_w]."""
    H, W = x.shape[-2:]
    if target_h > H or target_w > W:
        raise ValueError(f"target {target_h}x{target_w} exceeds source {H}x{W}")
    return _apply(x, area_matrix(H, target_h), area_matrix(W, target_w))


def downsample_backward(dout: np.ndarray, src_h: int, src_w: int) -> np.ndarray:
    mh = area_matrix(src_h, dout.shape[-2]).astype(dout.dtype)
    mw = area_matrix(src_w, dout.shape[-1]).astype(dout.dtype)
    return np.matmul(np.matmul(mh.T, dout), mw)


def resize_bilinear(image: np.ndarray, factor: float) -> np.ndarray:
    """Bilinear resize of a [..., H, W] array to round(factor * H) x round(factor * W)."""
    if not factor > 0:
        raise ValueError(f"resize factor must be positive, got {factor}")
    H, W = image.shape[-2:]
    new_h, new_w = math.floor(factor * H + 0.5), math.floor(factor * W + 0.5)
    if new_h < 1 or new_w < 1:
        raise ValueError(f"resizing {H}x{W} by {factor} gives an empty image")
    if (new_h, new_w) == (H, W):
        return image.copy()
    return _apply(image, bilinear_matrix(H, new_h), bilinear_matrix(W, new_w))
