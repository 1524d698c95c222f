"""
How much of a natural patch does a low-order basis capture?
===========================================================

Fit an 11x11 RGB patch with Gaussian derivative bases of increasing order
(sigma 5, extent 1) and compare with the best constant patch.
Reconstructions are written as PPM images next to this script.
"""

# %%
from pathlib import Path

import numpy as np
from skimage import data

from njet.fit import fit_patch, reconstruct
from njet.imageio import write_image

out = Path(__file__).with_name("out_fit")
out.mkdir(exist_ok=True)
img = data.astronaut().astype(float) / 255.0
patch = img[200:211, 220:231].transpose(2, 0, 1)
write_image(out / "patch.ppm", patch, 0.0, 1.0)

# %%
inner = patch[:, 1:-1, 1:-1]
const = np.sqrt(np.mean((inner - inner.mean(axis=(1, 2), keepdims=True)) ** 2))
print(f"constant fit RMSE {const:.4f}")
for order in range(5):
    fit = fit_patch(patch, 5.0, order, 1.0, border_ignore=1)
    rec = reconstruct(fit.alphas, 5.0, order, 1.0)
    write_image(out / f"recon_N{order}.ppm", np.clip(rec, 0, 1), 0.0, 1.0)
    print(f"order {order}: {fit.alphas.shape[1]:2d} coefficients per channel, RMSE {fit.residual:.4f}")

# %% [markdown]
# The residual never increases with the order because each basis contains
# the previous one.
