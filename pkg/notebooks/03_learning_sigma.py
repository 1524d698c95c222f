"""
Does the learned scale follow the input resolution?
===================================================

Train the toy network (one order-4 N-Jet layer with 16 filters, batch norm,
ReLU, max pooling, dense) on the same data resized by 1x, 1.5x and 2x and
watch sigma. With ``NJET_DATA_DIR`` set this uses MNIST, otherwise
synthetic blobs with random contrast.

Expect about 10 minutes on blobs and 25 minutes per seed on MNIST.
"""

# %%
import os

import numpy as np

from njet import data, models
from njet.train import TrainConfig, train

use_mnist = bool(os.environ.get("NJET_DATA_DIR"))
seed = 0

# %%
results = {}
for scale in (1.0, 1.5, 2.0):
    if use_mnist:
        ds = data.make_multiscale(data.load_mnist(split="train"), scale)
        cfg = TrainConfig(learning_rate=0.01, epochs=8, sigma_lr_scale=3.0, alpha_l2=1e-3,
                          seed=seed)
    else:
        size = int(round(20 * scale))
        ds = data.synth_blobs(400, size, scale, seed=seed, jitter=0.6)
        cfg = TrainConfig(learning_rate=0.005, epochs=30, sigma_lr_scale=5.0, seed=seed)
    model = models.build("toy", ds.image_shape[-1], ds.class_count, scale=scale, seed=seed)
    _, trace = train(model, ds, cfg)
    results[scale] = trace
    print(f"scale {scale}: sigma per epoch {np.round(trace.sigmas(), 2)}")

# %% [markdown]
# The ratio of the learned scales should be close to the resize ratio.

# %%
s15, s2 = results[1.5].final_sigma(), results[2.0].final_sigma()
print(f"sigma(2.0) / sigma(1.5) = {s2 / s15:.3f}  (resize ratio {2 / 1.5:.3f})")
