"""Gaussian targets, the masked MSE loss and sub-pixel decoding.

    python demos/03_heatmaps.py
"""

import numpy as np

from tokenpose.heatmap import decode, gaussian_target, mse_loss
from tokenpose.tensor import Tensor

center = (10.3, 20.7)
hm = gaussian_target(center, sigma=2.0, size=(32, 32))
row, col = np.unravel_index(hm.argmax(), hm.shape)
print(f"peak value {hm.max():.4f} at row {row}, col {col}")

for mode in ("argmax", "subpixel"):
    xy = decode(hm[None], mode).coords[0]
    err = np.abs(xy - center).max()
    print(f"{mode:9s} -> ({xy[0]:.4f}, {xy[1]:.4f})  error {err:.4f} px")

rng = np.random.default_rng(0)
centers = rng.uniform(2, 29, size=(1000, 2))
maps = np.stack([gaussian_target(c, 2.0, (32, 32)) for c in centers])
errs = np.abs(decode(maps, "subpixel").coords - centers).max()
print(f"1000 random centers, worst subpixel error {errs:.4f} px")

target = np.stack([hm, gaussian_target((5, 5), 2.0, (32, 32))])
pred = target + 0.1
print("loss, both visible :", float(mse_loss(Tensor(pred), target, [2, 2]).data))
pred[1] = 99.0
print("loss, 2nd unlabeled:", float(mse_loss(Tensor(pred), target, [2, 0]).data))
