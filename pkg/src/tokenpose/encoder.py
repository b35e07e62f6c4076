"""Pre-LN transformer encoder over keypoint + visual tokens."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import IndivisibleHeads, InvalidLayerIndex, ShapeMismatch
from .tensor import Tensor
from .tokenizer import KeypointTokenTable, TokenSequence


@dataclass
class AttentionRecord:
    """Post-softmax attention of one head in one layer.

    ``matrix`` has shape ``[..., S, S]``; leading axes are batch axes.
    Layers are numbered from 1, heads from 0.
    """

    layer: int
    head: int
    matrix: np.ndarray


@dataclass
class BlockWeights:
    ln1_gamma: Tensor
    ln1_beta: Tensor
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wp: Tensor
    bp: Optional[Tensor]
    ln2_gamma: Tensor
    ln2_beta: Tensor
    w1: Tensor
    b1: Optional[Tensor]
    w2: Tensor
    b2: Optional[Tensor]

    @classmethod
    def from_params(cls, params: dict, prefix: str) -> "BlockWeights":
        get = params.get
        return cls(
            ln1_gamma=params[prefix + "ln1.gamma"], ln1_beta=params[prefix + "ln1.beta"],
            wq=params[prefix + "attn.wq"], wk=params[prefix + "attn.wk"],
            wv=params[prefix + "attn.wv"], wp=params[prefix + "attn.wp"],
            bp=get(prefix + "attn.bp"),
            ln2_gamma=params[prefix + "ln2.gamma"], ln2_beta=params[prefix + "ln2.beta"],
            w1=params[prefix + "mlp.w1"], b1=get(prefix + "mlp.b1"),
            w2=params[prefix + "mlp.w2"], b2=get(prefix + "mlp.b2"),
        )


@dataclass
class EncoderState:
    """Token sequence after every layer; ``layers[0]`` is the encoder input."""

    layers: list
    n_keypoint: int
    records: list = field(default_factory=list)

    @property
    def num_layers(self) -> int:
        return len(self.layers) - 1

    @property
    def output(self) -> Tensor:
        return self.layers[-1]

    def keypoint_tokens(self, layer: Optional[int] = None) -> Tensor:
        layer = self.num_layers if layer is None else layer
        return self.layers[layer][..., : self.n_keypoint, :]

    def attention(self, layer: int) -> np.ndarray:
        """Attention of ``layer`` stacked over heads, ``[..., h, S, S]``."""
        mats = [r.matrix for r in self.records if r.layer == layer]
        if not mats:
            raise InvalidLayerIndex(f"no attention retained for layer {layer}")
        return np.stack(mats, axis=-3)


def self_attention(t, wq, wk, wv):
    """Single-head scaled dot-product attention of a token matrix with itself.

    Returns the attended values ``softmax(QKᵀ/√d_h) V`` and an
    :class:`AttentionRecord` holding the softmax weights.
    """
    t = T.as_tensor(t)
    wq, wk, wv = T.as_tensor(wq), T.as_tensor(wk), T.as_tensor(wv)
    if not (t.shape[-1] == wq.shape[0] == wk.shape[0] == wv.shape[0]):
        raise ShapeMismatch(
            f"tokens {t.shape} vs projections {wq.shape}, {wk.shape}, {wv.shape}"
        )
    if wq.shape[1] != wk.shape[1]:
        raise ShapeMismatch(f"query width {wq.shape[1]} != key width {wk.shape[1]}")
    dh = wq.shape[1]
    q, k, v = t @ wq, t @ wk, t @ wv
    scores = (q @ T.swap_last(k)) * (1.0 / math.sqrt(dh))
    attn = T.softmax_lastdim(scores)
    return attn @ v, AttentionRecord(layer=0, head=0, matrix=attn.data)


def _split_heads(x: Tensor, h: int) -> Tensor:
    lead = x.shape[:-1]
    n = len(lead) - 1
    x = x.reshape(*lead, h, x.shape[-1] // h)
    return T.transpose(x, tuple(range(n)) + (n + 1, n, n + 2))


def _merge_heads(x: Tensor) -> Tensor:
    n = x.ndim - 3
    x = T.transpose(x, tuple(range(n)) + (n + 1, n, n + 2))
    return x.reshape(*x.shape[:-2], x.shape[-2] * x.shape[-1])


def multi_head_attention(t, wq, wk, wv, wp, num_heads: int, bp=None,
                         dropout: float = 0.0, rng=None):
    """``h`` attention heads, concatenated in head order and projected by ``wp``.

    ``wq``, ``wk`` and ``wv`` are ``[d, h*d_h]``: head ``i`` uses columns
    ``i*d_h:(i+1)*d_h``. Returns the projected output and the attention
    weights as an array ``[..., h, S, S]``.
    """
    t = T.as_tensor(t)
    d = t.shape[-1]
    if d % num_heads:
        raise IndivisibleHeads(d, num_heads)
    wq, wk, wv, wp = (T.as_tensor(w) for w in (wq, wk, wv, wp))
    width = wq.shape[1]
    if width % num_heads or wk.shape[1] != width or wv.shape[1] != width:
        raise ShapeMismatch(f"projection widths {wq.shape}, {wk.shape}, {wv.shape}")
    if wp.shape[0] != wv.shape[1]:
        raise ShapeMismatch(f"output projection {wp.shape} vs value width {wv.shape[1]}")
    dh = width // num_heads
    q = _split_heads(t @ wq, num_heads)
    k = _split_heads(t @ wk, num_heads)
    v = _split_heads(t @ wv, num_heads)
    scores = (q @ T.swap_last(k)) * (1.0 / math.sqrt(dh))
    attn = T.softmax_lastdim(scores)
    weights = attn.data
    if dropout > 0.0 and rng is not None:
        attn = T.dropout(attn, dropout, rng)
    out = _merge_heads(attn @ v) @ wp
    if bp is not None:
        out = out + bp
    return out, weights


def encoder_block(t, w: BlockWeights, num_heads: int, eps: float = 1e-6,
                  attn_dropout: float = 0.0, mlp_dropout: float = 0.0, rng=None):
    """``t' = t + MSA(LN(t))`` then ``t' + MLP(LN(t'))``; returns (output, attention)."""
    t = T.as_tensor(t)
    a, weights = multi_head_attention(
        T.layer_norm(t, w.ln1_gamma, w.ln1_beta, eps),
        w.wq, w.wk, w.wv, w.wp, num_heads, bp=w.bp, dropout=attn_dropout, rng=rng,
    )
    t = t + a
    hidden = T.layer_norm(t, w.ln2_gamma, w.ln2_beta, eps) @ w.w1
    if w.b1 is not None:
        hidden = hidden + w.b1
    hidden = T.gelu(hidden)
    if mlp_dropout > 0.0 and rng is not None:
        hidden = T.dropout(hidden, mlp_dropout, rng)
    m = hidden @ w.w2
    if w.b2 is not None:
        m = m + w.b2
    return t + m, weights


def run_encoder(seq: TokenSequence, blocks: list, num_heads: int,
                record_attention: bool = False, eps: float = 1e-6,
                attn_dropout: float = 0.0, mlp_dropout: float = 0.0,
                rng=None) -> EncoderState:
    """Apply the blocks in order, keeping every intermediate token sequence."""
    state = EncoderState(layers=[seq.tokens], n_keypoint=seq.n_keypoint)
    t = seq.tokens
    for index, w in enumerate(blocks, start=1):
        t, weights = encoder_block(t, w, num_heads, eps, attn_dropout, mlp_dropout, rng)
        state.layers.append(t)
        if record_attention:
            for head in range(num_heads):
                state.records.append(
                    AttentionRecord(index, head, np.array(weights[..., head, :, :]))
                )
    return state


def fuse_keypoint_tokens(state: EncoderState, layers) -> Tensor:
    """Concatenate each keypoint's token from the given layers (1-based, ascending)."""
    layers = list(layers)
    if not layers:
        raise InvalidLayerIndex("no layers given for fusion")
    for a, b in zip(layers, layers[1:]):
        if b <= a:
            raise InvalidLayerIndex(f"fusion layers must be strictly ascending: {layers}")
    if layers[0] < 1 or layers[-1] > state.num_layers:
        raise InvalidLayerIndex(
            f"fusion layers {layers} outside 1..{state.num_layers}"
        )
    if len(layers) == 1:
        return state.keypoint_tokens(layers[0])
    return T.concat([state.keypoint_tokens(l) for l in layers], axis=-1)


def keypoint_prior_matrix(table) -> np.ndarray:
    """Row-softmax of the keypoint tokens' inner products divided by √d."""
    if isinstance(table, KeypointTokenTable):
        table = table.embeddings
    e = np.asarray(table.data if isinstance(table, Tensor) else table, dtype=np.float64)
    scores = e @ e.T / math.sqrt(e.shape[1])
    scores -= scores.max(axis=1, keepdims=True)
    p = np.exp(scores)
    return p / p.sum(axis=1, keepdims=True)
