"""IDX (MNIST) ingestion, multi-scale datasets and a synthetic blob generator."""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from njet.resample import resize_bilinear

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


class IDXError(ValueError):
    """Base class for malformed IDX files."""


class IDXMagicError(IDXError):
    pass


class IDXTruncatedError(IDXError):
    pass


class IDXCountMismatchError(IDXError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    images: np.ndarray  # [n, C, H, W] in [0, 1]
    labels: np.ndarray  # [n]
    class_count: int

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be [n, C, H, W], got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels outside [0, {self.class_count})")

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.images[idx], self.labels[idx], self.class_count)

    @property
    def image_shape(self):
        return self.images.shape[1:]


def _read_idx(path, magic, what):
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise IDXTruncatedError(f"{path}: {len(raw)} bytes is too short for an IDX header")
    got, count = struct.unpack(">II", raw[:8])
    if got != magic:
        raise IDXMagicError(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x} for {what}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IDXTruncatedError(f"{path}: header truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    n = math.prod(dims)
    if len(raw) - head < n:
        raise IDXTruncatedError(f"{path}: expected {n} data bytes, found {len(raw) - head}")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=head).reshape(dims)


def load_idx(images_path, labels_path, class_count=10) -> LabeledDataset:
    """Read an IDX image/label pair; pixels are scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES, "images")
    labels = _read_idx(labels_path, IDX_LABELS, "labels")
    if len(images) != len(labels):
        raise IDXCountMismatchError(
            f"{images_path} holds {len(images)} images but {labels_path} holds {len(labels)} labels")
    x = (images.astype(np.float32) / 255.0)[:, None]
    return LabeledDataset(x, labels.astype(np.int64), class_count)


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 images [n, H, W] (or floats in [0, 1]) and labels as IDX files."""
    images = np.asarray(images)
    if images.dtype != np.uint8:
        images = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    if images.ndim == 4:
        images = images[:, 0]
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES, n, h, w) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS, len(labels)) + labels.tobytes())


def data_dir(default=None) -> Path:
    root = os.environ.get("NJET_DATA_DIR", default)
    if root is None:
        raise FileNotFoundError("no dataset directory: pass one explicitly or set NJET_DATA_DIR")
    return Path(root)


def load_mnist(root=None, split="train") -> LabeledDataset:
    root = data_dir(root) if root is None else Path(root)
    prefix = "train" if split == "train" else "t10k"
    return load_idx(root / f"{prefix}-images-idx3-ubyte", root / f"{prefix}-labels-idx1-ubyte")


def make_multiscale(ds: LabeledDataset, factor: float) -> LabeledDataset:
    """Bilinearly resize every image by ``factor``; labels are kept."""
    if factor == 1:
        return LabeledDataset(ds.images.copy(), ds.labels.copy(), ds.class_count)
    images = resize_bilinear(ds.images, factor)
    # interpolation weights are convex, but guard against rounding outside [0, 1]
    np.clip(images, 0.0, 1.0, out=images)
    return LabeledDataset(images.astype(ds.images.dtype), ds.labels.copy(), ds.class_count)


def _blob(h, w, cy, cx, radius):
    y = np.arange(h)[:, None]
    x = np.arange(w)[None, :]
    return np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2.0 * radius ** 2))


def synth_blobs(n, image_size=28, scale_factor=1.0, seed=0, radius=1.5, noise=0.0, jitter=0.0,
                dtype=np.float32) -> LabeledDataset:
    """Two-class toy set: one Gaussian blob (label 0) or two separated blobs (label 1).

    Blob radius is ``radius * scale_factor``. Centres keep two radii from
    the border and two blobs are at least four radii apart. Even indices
    are class 0, giving ceil(n/2) / floor(n/2) balance. ``noise`` adds
    white Gaussian pixel noise of that standard deviation (clipped to
    [0, 1]), drawn after all blob positions so it never moves a blob.
    ``jitter`` scales each image by an amplitude drawn from
    ``[1 - jitter, 1]`` so total brightness alone cannot tell the classes
    apart.
    """
    if n < 1:
        raise ValueError(f"need at least one sample, got n={n}")
    if noise < 0:
        raise ValueError(f"noise must be >= 0, got {noise}")
    if not 0 <= jitter < 1:
        raise ValueError(f"jitter must lie in [0, 1), got {jitter}")
    rho = radius * scale_factor
    margin = 2.0 * rho
    if image_size - 2 * margin < 4 * rho:
        raise ValueError(f"blobs of radius {rho:.3g} do not fit a {image_size}px image")
    rng = np.random.default_rng(seed)
    images = np.zeros((n, 1, image_size, image_size))
    labels = np.arange(n) % 2
    lo, hi = margin, image_size - 1 - margin
    for k in range(n):
        c0 = rng.uniform(lo, hi, size=2)
        img = _blob(image_size, image_size, *c0, rho)
        if labels[k]:
            while True:
                c1 = rng.uniform(lo, hi, size=2)
                if np.hypot(*(c1 - c0)) >= 4 * rho:
                    break
            img = np.maximum(img, _blob(image_size, image_size, *c1, rho))
        images[k, 0] = img
    if jitter > 0:
        images *= rng.uniform(1.0 - jitter, 1.0, size=(n, 1, 1, 1))
    if noise > 0:
        images += noise * rng.standard_normal(images.shape)
        np.clip(images, 0.0, 1.0, out=images)
    return LabeledDataset(images.astype(dtype), labels.astype(np.int64), 2)
