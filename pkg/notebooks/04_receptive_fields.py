"""
Effective receptive fields and safe subsampling
===============================================

With safe subsampling, each N-Jet block shrinks its feature map by
(1/2)^(sigma/r), so a large learned sigma buys a smaller, cheaper map.
We then compare the effective receptive field of a toy network trained
at two input scales.
"""

# %%
import numpy as np

from njet import data, models
from njet.resample import safe_size
from njet.train import TrainConfig, erf_map, second_moment, train

# %% [markdown]
# Safe-subsampling sizes for a 112 px map.

# %%
for sigma in (0.5, 1.0, 2.0, 4.0, 8.0):
    print(f"sigma {sigma:3.1f}: 112 -> {safe_size(112, sigma, 4.0)}")

# %% [markdown]
# Map sizes through a two-layer stack on a 112 px input, for two sigmas.

# %%
for sigma in (1.0, 4.0):
    net = models.build("two_layer", 112, 10, conv="njet", sigma=sigma, subsample_r=4.0)
    h = np.zeros((1, 1, 112, 112), dtype=np.float32)
    shapes = []
    for layer in net.layers:
        h = layer.forward(h, train=False)
        shapes.append(h.shape[-1] if h.ndim == 4 else None)
    print(f"sigma {sigma}: spatial sizes {[s for s in shapes if s is not None]}")

# %%
moments = {}
for scale in (1.0, 2.0):
    size = int(round(20 * scale))
    ds = data.synth_blobs(400, size, scale, seed=0, jitter=0.6)
    model = models.build("toy", size, 2, scale=scale, seed=0)
    train(model, ds, TrainConfig(learning_rate=0.005, epochs=30, sigma_lr_scale=5.0))
    m = erf_map(model, ds.images[:32], (size // 2, size // 2), upto=3)
    moments[scale] = second_moment(m)
    print(f"scale {scale}: sigma {model.njet_layers()[0].sigma:.3f}, "
          f"eRF second moment {moments[scale]:.2f} px^2")

# %% [markdown]
# The second moment grows with the input scale because the learned sigma
# grows with it.

# %%
print("ratio", round(moments[2.0] / moments[1.0], 2))
