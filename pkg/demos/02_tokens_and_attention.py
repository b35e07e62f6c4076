"""From an image to keypoint and visual tokens, through the encoder.

Shows the patch grid, the 2D sine position table, the assembled sequence
and two properties of the encoder: attention rows are distributions, and
without position embedding the keypoint outputs ignore patch order.

    python demos/02_tokens_and_attention.py
"""

import numpy as np

from tokenpose.config import desk_toy
from tokenpose.model import TokenPose
from tokenpose.tokenizer import patchify, sine2d_embedding

cfg = desk_toy()
print(f"input {cfg.input_h}x{cfg.input_w}, patches {cfg.patch_h}x{cfg.patch_w} "
      f"-> grid {cfg.grid}, {cfg.num_visual} visual + {cfg.num_keypoints} keypoint tokens")

image = np.random.default_rng(0).random((3, 64, 64)).astype(np.float32)
patches = patchify(image, cfg)
print("flattened patches:", patches.shape)

pe = sine2d_embedding(*cfg.grid, cfg.embed_dim)
print("sine table:", pe.shape, "| token (row 0, col 1) first dims:", np.round(pe[1, :4], 3))

model = TokenPose(cfg, seed=0)
heatmaps, state = model(image[None], record_attention=True)
att = state.attention(cfg.num_layers)[0]
print("heatmaps:", heatmaps.shape, "| last-layer attention:", att.shape)
print("attention rows sum to 1:", np.allclose(att.sum(-1), 1.0, atol=1e-6))

# shuffle patches: with no position embedding, keypoint tokens do not change
plain = TokenPose(desk_toy(pe_mode="none"), seed=0, dtype=np.float64)
perm = np.random.default_rng(1).permutation(cfg.num_visual)
grid_h, grid_w = cfg.grid
blocks = image.reshape(3, grid_h, 8, grid_w, 8).transpose(1, 3, 0, 2, 4).reshape(-1, 3, 8, 8)
shuffled = blocks[perm].reshape(grid_h, grid_w, 3, 8, 8).transpose(2, 0, 3, 1, 4).reshape(3, 64, 64)
a = plain.encode(image[None]).keypoint_tokens().data
b = plain.encode(shuffled[None]).keypoint_tokens().data
print(f"keypoint outputs after patch shuffle, max change: {np.abs(a - b).max():.2e}")
