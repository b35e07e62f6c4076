"""Visual tokens from image patches, position embeddings and keypoint tokens."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import NonDivisible, NonDivisiblePatch, ShapeMismatch
from .tensor import Tensor

STEM_WIDTH = 32
STEM_CHANNELS = 64


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0):
    """Zero-mean normal samples, redrawn until they fall within ``bound`` std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape if shape is not None else (fan_in, fan_out))


def _patch_dims(cfg) -> tuple:
    if isinstance(cfg, ModelConfig):
        return cfg.patch_h, cfg.patch_w
    return int(cfg[0]), int(cfg[1])


def patchify(image, cfg):
    """Split ``[c,h,w]`` (or ``[b,c,h,w]``) into row-major flattened patches.

    Patches are enumerated top-left to bottom-right. Each row flattens one
    patch in (row, column, channel) order, giving length ``P_h*P_w*c``.
    Accepts numpy arrays or Tensors; Tensors keep their gradient path.
    """
    ph, pw = _patch_dims(cfg)
    x = image if isinstance(image, Tensor) else Tensor(np.asarray(image))
    single = x.ndim == 3
    if single:
        x = x.reshape(1, *x.shape)
    if x.ndim != 4:
        raise ShapeMismatch(f"patchify expects [c,h,w] or [b,c,h,w], got {x.shape}")
    b, c, h, w = x.shape
    if h % ph or w % pw:
        raise NonDivisiblePatch(h, w, ph, pw)
    gh, gw = h // ph, w // pw
    x = x.reshape(b, c, gh, ph, gw, pw)
    x = T.transpose(x, (0, 2, 4, 3, 5, 1))
    x = x.reshape(b, gh * gw, ph * pw * c)
    if single:
        x = x.reshape(gh * gw, ph * pw * c)
    return x if isinstance(image, Tensor) else x.data


def unpatchify(patches, cfg, height: int, width: int, channels: int) -> np.ndarray:
    """Inverse of :func:`patchify` for numpy input."""
    ph, pw = _patch_dims(cfg)
    p = np.asarray(patches)
    single = p.ndim == 2
    if single:
        p = p[None]
    b = p.shape[0]
    gh, gw = height // ph, width // pw
    x = p.reshape(b, gh, gw, ph, pw, channels).transpose(0, 5, 1, 3, 2, 4)
    x = x.reshape(b, channels, height, width)
    return x[0] if single else x


@lru_cache(maxsize=32)
def _sine2d_cached(grid_h: int, grid_w: int, dim: int, dtype_name: str) -> np.ndarray:
    half = dim // 2
    i = np.arange(half // 2, dtype=np.float64)
    inv_freq = 1.0 / (10000.0 ** (2.0 * i / half))

    def encode(pos):
        angles = pos[:, None] * inv_freq[None, :]
        out = np.empty((pos.size, half))
        out[:, 0::2] = np.sin(angles)
        out[:, 1::2] = np.cos(angles)
        return out

    rows, cols = np.divmod(np.arange(grid_h * grid_w, dtype=np.float64), grid_w)
    pe = np.concatenate([encode(cols), encode(rows)], axis=1).astype(dtype_name)
    pe.setflags(write=False)
    return pe


def sine2d_embedding(grid_h: int, grid_w: int, dim: int, dtype=np.float64) -> np.ndarray:
    """Fixed 2D sine/cosine position table of shape ``[grid_h*grid_w, dim]``.

    The first half of the channels encodes the patch column, the second
    half its row; inside each half, even channels carry
    ``sin(pos / 10000^(2i/(dim/2)))`` and odd channels the matching cosine.
    """
    if dim % 4:
        raise ShapeMismatch(f"sine2d needs dim divisible by 4, got {dim}")
    return _sine2d_cached(grid_h, grid_w, dim, np.dtype(dtype).name)


def embed_visual(patches, projection: Tensor, cfg: ModelConfig, bias=None,
                 pos_embed=None) -> Tensor:
    """Project flattened patches to ``d`` dims and add the position embedding."""
    patches = T.as_tensor(patches)
    projection = T.as_tensor(projection)
    if patches.shape[-1] != projection.shape[0]:
        raise ShapeMismatch(
            f"patch length {patches.shape[-1]} vs projection {projection.shape}"
        )
    out = patches @ projection
    if bias is not None:
        out = out + bias
    if cfg.pe_mode == "sine2d":
        gh, gw = cfg.grid
        pe = sine2d_embedding(gh, gw, projection.shape[1], dtype=out.dtype)
        if pe.shape[0] != patches.shape[-2]:
            raise ShapeMismatch(f"{patches.shape[-2]} patches but a {gh}x{gw} grid")
        out = out + Tensor(pe)
    elif cfg.pe_mode == "learnable":
        if pos_embed is None:
            raise ValueError("pe_mode='learnable' needs a pos_embed parameter")
        out = out + pos_embed
    return out


def conv_stem(image, params: dict, prefix: str = "stem.") -> Tensor:
    """Two 3x3 stride-2 convolutions with ReLU, quartering height and width."""
    x = T.as_tensor(image)
    single = x.ndim == 3
    if single:
        x = x.reshape(1, *x.shape)
    h, w = x.shape[-2:]
    if h % 4 or w % 4:
        raise NonDivisible(f"conv_stem needs height and width divisible by 4, got {h}x{w}")
    for layer in ("conv1", "conv2"):
        k = params[f"{prefix}{layer}.weight"]
        b = params[f"{prefix}{layer}.bias"]
        x = T.conv2d(x, k, stride=2, padding=1)
        x = T.relu(x + b.reshape(1, -1, 1, 1))
    return x.reshape(*x.shape[1:]) if single else x


class KeypointTokenTable:
    """The ``N`` learnable keypoint embeddings shared by every input."""

    def __init__(self, embeddings: Tensor):
        self.embeddings = embeddings

    @classmethod
    def init(cls, num_keypoints: int, dim: int, rng: np.random.Generator,
             dtype=np.float32) -> "KeypointTokenTable":
        data = trunc_normal(rng, (num_keypoints, dim)).astype(dtype)
        return cls(Tensor(data, requires_grad=True, name="keypoint_tokens"))

    @property
    def num_keypoints(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


@dataclass
class TokenSequence:
    """Keypoint tokens at rows ``0..N`` followed by ``L`` visual tokens."""

    tokens: Tensor
    n_keypoint: int
    n_visual: int

    @property
    def keypoint_rows(self) -> Tensor:
        return self.tokens[..., : self.n_keypoint, :]

    @property
    def visual_rows(self) -> Tensor:
        return self.tokens[..., self.n_keypoint :, :]


def assemble(keypoints, visual) -> TokenSequence:
    """Prepend the keypoint tokens to the visual tokens (no position embedding on them)."""
    table = keypoints.embeddings if isinstance(keypoints, KeypointTokenTable) else T.as_tensor(keypoints)
    visual = T.as_tensor(visual)
    if table.shape[-1] != visual.shape[-1]:
        raise ShapeMismatch(
            f"keypoint tokens have width {table.shape[-1]}, visual tokens {visual.shape[-1]}"
        )
    if visual.ndim == 3:
        table = T.expand(table, (visual.shape[0],) + table.shape)
    tokens = T.concat([table, visual], axis=-2)
    return TokenSequence(tokens, table.shape[-2], visual.shape[-2])
