"""
Preparing a desk-scale MNIST
============================

The experiments read MNIST from IDX files. Without the original archive
at hand, this script rebuilds an IDX subset from the digits bundled with
the npm package ``mnist`` (about 10k images stored as JSON, one file per
class, pixel values in [0, 1]).

Usage::

    npm pack mnist && tar xzf mnist-*.tgz
    python notebooks/00_prepare_mnist.py package/src/digits /path/to/mnist

Then point ``NJET_DATA_DIR`` at the output directory.
"""

# %%
import json
import sys
from pathlib import Path

import numpy as np

from njet.data import load_mnist, write_idx

src = Path(sys.argv[1] if len(sys.argv) > 1 else "package/src/digits")
dst = Path(sys.argv[2] if len(sys.argv) > 2 else "mnist")
n_train, n_test = 8000, 2000

# %% [markdown]
# Each JSON file is one flat list of 784-pixel images for a single digit.

# %%
images, labels = [], []
for digit in range(10):
    flat = np.asarray(json.loads((src / f"{digit}.json").read_text())["data"])
    imgs = flat.reshape(-1, 28, 28)
    images.append(np.rint(imgs * 255).astype(np.uint8))
    labels.append(np.full(len(imgs), digit, dtype=np.uint8))
images = np.concatenate(images)
labels = np.concatenate(labels)
print(f"{len(images)} digits, per class {np.bincount(labels)}")

# %% [markdown]
# Shuffle once with a fixed seed, then split train and test.

# %%
order = np.random.default_rng(0).permutation(len(images))
images, labels = images[order], labels[order]
dst.mkdir(parents=True, exist_ok=True)
write_idx(images[:n_train], labels[:n_train],
          dst / "train-images-idx3-ubyte", dst / "train-labels-idx1-ubyte")
write_idx(images[n_train:n_train + n_test], labels[n_train:n_train + n_test],
          dst / "t10k-images-idx3-ubyte", dst / "t10k-labels-idx1-ubyte")

# %%
for split in ("train", "test"):
    ds = load_mnist(dst, split)
    print(split, ds.images.shape, "class counts", np.bincount(ds.labels, minlength=10))
