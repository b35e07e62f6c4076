"""The full network: tokenizer, encoder and heatmap head bound to one parameter map."""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .encoder import BlockWeights, EncoderState, fuse_keypoint_tokens, run_encoder
from .heatmap import head_forward
from .tensor import Tensor
from .tokenizer import (
    STEM_CHANNELS,
    STEM_WIDTH,
    KeypointTokenTable,
    assemble,
    conv_stem,
    embed_visual,
    patchify,
    trunc_normal,
    xavier_uniform,
)

LN_EPS = 1e-6


def param_shapes(cfg: ModelConfig) -> dict:
    """Name -> shape of every trainable tensor, in a fixed order."""
    d, n = cfg.embed_dim, cfg.num_keypoints
    shapes = {}
    in_ch = cfg.channels
    if cfg.stem == "conv_stem":
        shapes["stem.conv1.weight"] = (STEM_WIDTH, cfg.channels, 3, 3)
        shapes["stem.conv1.bias"] = (STEM_WIDTH,)
        shapes["stem.conv2.weight"] = (STEM_CHANNELS, STEM_WIDTH, 3, 3)
        shapes["stem.conv2.bias"] = (STEM_CHANNELS,)
        in_ch = STEM_CHANNELS
    patch_len = cfg.patch_h * cfg.patch_w * in_ch
    shapes["patch_embed.weight"] = (patch_len, d)
    shapes["patch_embed.bias"] = (d,)
    if cfg.pe_mode == "learnable":
        shapes["pos_embed"] = (cfg.num_visual, d)
    shapes["keypoint_tokens"] = (n, d)
    hidden = cfg.mlp_hidden
    for i in range(cfg.num_layers):
        p = f"blocks.{i}."
        shapes[p + "ln1.gamma"] = (d,)
        shapes[p + "ln1.beta"] = (d,)
        for w in ("wq", "wk", "wv", "wp"):
            shapes[p + "attn." + w] = (d, d)
        shapes[p + "attn.bp"] = (d,)
        shapes[p + "ln2.gamma"] = (d,)
        shapes[p + "ln2.beta"] = (d,)
        shapes[p + "mlp.w1"] = (d, hidden)
        shapes[p + "mlp.b1"] = (hidden,)
        shapes[p + "mlp.w2"] = (hidden, d)
        shapes[p + "mlp.b2"] = (d,)
    shapes["final_ln.gamma"] = (cfg.head_in,)
    shapes["final_ln.beta"] = (cfg.head_in,)
    shapes["head.weight"] = (cfg.head_in, cfg.heatmap_h * cfg.heatmap_w)
    shapes["head.bias"] = (cfg.heatmap_h * cfg.heatmap_w,)
    return shapes


def count_params(cfg: ModelConfig) -> int:
    """Exact number of trainable scalars for ``cfg``.

    Computed in closed form, independently of :func:`param_shapes`.
    """
    d, hidden, hw = cfg.embed_dim, cfg.mlp_hidden, cfg.heatmap_h * cfg.heatmap_w
    in_ch, total = cfg.channels, 0
    if cfg.stem == "conv_stem":
        total += STEM_WIDTH * (cfg.channels * 9 + 1) + STEM_CHANNELS * (STEM_WIDTH * 9 + 1)
        in_ch = STEM_CHANNELS
    total += (cfg.patch_h * cfg.patch_w * in_ch + 1) * d
    if cfg.pe_mode == "learnable":
        total += cfg.num_visual * d
    total += cfg.num_keypoints * d
    per_block = 2 * d + 4 * d * d + d + 2 * d + (d + 1) * hidden + (hidden + 1) * d
    total += cfg.num_layers * per_block
    total += 2 * cfg.head_in + (cfg.head_in + 1) * hw
    return total


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> dict:
    """Xavier-uniform matrices, zero biases, unit LayerNorm gains, N(0, 0.02) tokens."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name in ("keypoint_tokens", "pos_embed"):
            data = trunc_normal(rng, shape)
        elif leaf == "gamma":
            data = np.ones(shape)
        elif leaf in ("beta", "bias", "bp", "b1", "b2"):
            data = np.zeros(shape)
        elif len(shape) == 4:
            fan_in = shape[1] * shape[2] * shape[3]
            fan_out = shape[0] * shape[2] * shape[3]
            data = xavier_uniform(rng, fan_in, fan_out, shape)
        else:
            data = xavier_uniform(rng, shape[0], shape[1])
        params[name] = Tensor(np.asarray(data, dtype=dtype), requires_grad=True, name=name)
    return params


class TokenPose:
    """Keypoint tokens and patch tokens through a transformer, read out as heatmaps.

    Args:
        cfg: architecture.
        seed: initialization seed.
        dtype: float32 for training, float64 for gradient checks.
        attn_dropout: dropout on attention weights during training.
        mlp_dropout: dropout after the MLP activation during training.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32,
                 attn_dropout: float = 0.0, mlp_dropout: float = 0.0,
                 params: Optional[dict] = None):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.attn_dropout = attn_dropout
        self.mlp_dropout = mlp_dropout
        self.params = params if params is not None else init_params(cfg, seed, dtype)

    @property
    def keypoint_table(self) -> KeypointTokenTable:
        return KeypointTokenTable(self.params["keypoint_tokens"])

    def num_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def state_dict(self) -> dict:
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, arrays: dict) -> None:
        expected = param_shapes(self.cfg)
        missing = set(expected) - set(arrays)
        extra = set(arrays) - set(expected)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, shape in expected.items():
            arr = np.asarray(arrays[name], dtype=self.dtype)
            if arr.shape != tuple(shape):
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            self.params[name] = Tensor(arr.copy(), requires_grad=True, name=name)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def blocks(self) -> list:
        return [BlockWeights.from_params(self.params, f"blocks.{i}.")
                for i in range(self.cfg.num_layers)]

    def encode(self, images, record_attention: bool = False, training: bool = False,
               rng: Optional[np.random.Generator] = None) -> EncoderState:
        cfg, p = self.cfg, self.params
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=self.dtype))
        if x.ndim == 3:
            x = x.reshape(1, *x.shape)
        if cfg.stem == "conv_stem":
            x = conv_stem(x, p)
        patches = patchify(x, cfg)
        visual = embed_visual(patches, p["patch_embed.weight"], cfg,
                              bias=p["patch_embed.bias"], pos_embed=p.get("pos_embed"))
        seq = assemble(self.keypoint_table, visual)
        use_dropout = training and rng is not None
        return run_encoder(
            seq, self.blocks(), cfg.num_heads, record_attention=record_attention,
            eps=LN_EPS,
            attn_dropout=self.attn_dropout if use_dropout else 0.0,
            mlp_dropout=self.mlp_dropout if use_dropout else 0.0,
            rng=rng,
        )

    def head(self, state: EncoderState) -> Tensor:
        cfg, p = self.cfg, self.params
        if cfg.fusion_layers:
            kp = fuse_keypoint_tokens(state, cfg.fusion_layers)
        else:
            kp = state.keypoint_tokens()
        kp = T.layer_norm(kp, p["final_ln.gamma"], p["final_ln.beta"], LN_EPS)
        return head_forward(kp, p["head.weight"], p["head.bias"],
                            (cfg.heatmap_h, cfg.heatmap_w))

    def forward(self, images, record_attention: bool = False, training: bool = False,
                rng: Optional[np.random.Generator] = None):
        """Images ``[B,c,H,W]`` -> (heatmaps ``[B,N,Ĥ,Ŵ]``, encoder state)."""
        state = self.encode(images, record_attention, training, rng)
        return self.head(state), state

    __call__ = forward

    def predict(self, images, batch_size: int = 64) -> np.ndarray:
        """Heatmaps for a stack of images, without building a graph."""
        images = np.asarray(images, dtype=self.dtype)
        outs = []
        with T.no_grad():
            for start in range(0, images.shape[0], batch_size):
                hm, _ = self.forward(images[start:start + batch_size])
                outs.append(hm.data)
        return np.concatenate(outs, axis=0)
