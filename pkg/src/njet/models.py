"""Small architectures used by the experiments.

``toy``        N-Jet conv (order 4, 16 filters) -> BN -> ReLU -> max pool -> dense.
               The pool window grows with the input scale (2, 3, 4 for 1x,
               1.5x, 2x) so the dense layer always sees the same grid.
``two_layer``  two conv blocks (conv -> BN -> ReLU), global average pool, dense.
``four_layer`` four such blocks.

The two- and four-layer nets come with either N-Jet or fixed-size
standard convolutions for head-to-head runs.
"""

from __future__ import annotations

import numpy as np

from njet.nn.layers import (BatchNorm2d, Conv2d, Dense, GlobalAvgPool, MaxPool2d,
                            NJetConv2d, ReLU, SafeSubsample, Sequential)

ARCHS = ("toy", "two_layer", "four_layer")


def pool_window(scale: float) -> int:
    return max(1, int(round(2 * scale)))


def toy(image_size, classes=10, scale=1.0, in_channels=1, filters=16, order=4,
        extent_k=2.0, sigma=1.0, seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    win = pool_window(scale)
    grid = image_size // win
    njet = NJetConv2d(in_channels, filters, order, extent_k, sigma, rng=rng, dtype=dtype)
    return Sequential([
        njet,
        BatchNorm2d(filters, dtype=dtype),
        ReLU(),
        MaxPool2d(win, win),
        Dense(filters * grid * grid, classes, rng=rng, dtype=dtype),
    ], name="toy")


def conv_stack(depth, classes=10, in_channels=1, channels=16, conv="njet", size=3,
               order=3, extent_k=2.0, sigma=1.0, subsample_r=None, seed=0,
               dtype=np.float32):
    rng = np.random.default_rng(seed)
    layers = []
    c_in = in_channels
    for _ in range(depth):
        if conv == "njet":
            c = NJetConv2d(c_in, channels, order, extent_k, sigma, rng=rng, dtype=dtype)
        elif conv == "standard":
            c = Conv2d(c_in, channels, size, rng=rng, dtype=dtype)
        else:
            raise ValueError(f"conv must be 'njet' or 'standard', got {conv!r}")
        layers += [c, BatchNorm2d(channels, dtype=dtype), ReLU()]
        if subsample_r is not None and conv == "njet":
            layers.append(SafeSubsample(c, subsample_r))
        c_in = channels
    layers += [GlobalAvgPool(), Dense(channels, classes, rng=rng, dtype=dtype)]
    return Sequential(layers, name=f"{depth}layer_{conv}")


def build(arch, image_size, classes=10, scale=1.0, conv="njet", seed=0, dtype=np.float32,
          **kw):
    if arch == "toy":
        return toy(image_size, classes, scale, seed=seed, dtype=dtype, **kw)
    if arch == "two_layer":
        return conv_stack(2, classes, conv=conv, seed=seed, dtype=dtype, **kw)
    if arch == "four_layer":
        return conv_stack(4, classes, conv=conv, seed=seed, dtype=dtype, **kw)
    raise ValueError(f"unknown architecture {arch!r}; choose from {ARCHS}")
