import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tokenpose import tensor as T
from tokenpose.config import ModelConfig, tokenpose_s_v1, tokenpose_t
from tokenpose.errors import NonDivisible, NonDivisiblePatch, ShapeMismatch
from tokenpose.model import init_params
from tokenpose.tensor import Tensor
from tokenpose.tokenizer import (
    KeypointTokenTable,
    assemble,
    conv_stem,
    embed_visual,
    patchify,
    sine2d_embedding,
    trunc_normal,
    unpatchify,
)


def cfg_with(**kw):
    base = dict(input_h=8, input_w=8, channels=1, patch_h=2, patch_w=2, embed_dim=8,
                num_layers=1, num_heads=2, num_keypoints=2, heatmap_h=4, heatmap_w=4)
    base.update(kw)
    return ModelConfig(**base)


# ---------------------------------------------------------------- patchify


def test_patchify_table_config_shape():
    cfg = tokenpose_t()
    out = patchify(np.zeros((3, 256, 192)), cfg)
    assert out.shape == (256, 16 * 12 * 3) == (256, 576)


def test_patchify_enumeration_order():
    img = np.arange(16, dtype=float).reshape(1, 4, 4)
    out = patchify(img, (2, 2))
    assert out.shape == (4, 4)
    # row 0 holds pixels (0,0),(0,1),(1,0),(1,1)
    np.testing.assert_array_equal(out[0], [img[0, 0, 0], img[0, 0, 1], img[0, 1, 0], img[0, 1, 1]])
    # patches go left to right, then top to bottom
    np.testing.assert_array_equal(out[1], [2, 3, 6, 7])
    np.testing.assert_array_equal(out[2], [8, 9, 12, 13])


def test_patchify_channel_interleaving():
    img = np.stack([np.full((2, 2), 1.0), np.full((2, 2), 2.0)])
    img[:, 0, 1] += 10
    out = patchify(img, (2, 2))
    # each pixel contributes its channels consecutively
    np.testing.assert_array_equal(out[0], [1, 2, 11, 12, 1, 2, 1, 2])


def test_patchify_rejects_non_divisible():
    with pytest.raises(NonDivisiblePatch) as info:
        patchify(np.zeros((1, 5, 4)), (2, 2))
    assert "5" in str(info.value)


@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(1, 3),
       st.integers(1, 3), st.integers(0, 2**31))
def test_patchify_round_trip(c, gh, gw, ph, pw, seed):
    img = np.random.default_rng(seed).normal(size=(c, gh * ph, gw * pw))
    p = patchify(img, (ph, pw))
    assert p.shape == (gh * gw, ph * pw * c)
    np.testing.assert_array_equal(unpatchify(p, (ph, pw), gh * ph, gw * pw, c), img)


def test_patchify_batched_matches_single(rng):
    imgs = rng.normal(size=(3, 2, 4, 6))
    batch = patchify(imgs, (2, 3))
    for i in range(3):
        np.testing.assert_array_equal(batch[i], patchify(imgs[i], (2, 3)))


# ------------------------------------------------------------------ sine2d


def test_sine2d_position_zero():
    pe = sine2d_embedding(2, 3, 8)
    assert pe[0, 0] == 0.0 and pe[0, 1] == 1.0


def test_sine2d_formula_independent_evaluation():
    gh, gw, d = 3, 4, 16
    pe = sine2d_embedding(gh, gw, d)
    half = d // 2
    for idx in range(gh * gw):
        row, col = divmod(idx, gw)
        for k in range(half):
            i = k // 2
            freq = 10000 ** (2 * i / half)
            trig = math.sin if k % 2 == 0 else math.cos
            assert pe[idx, k] == pytest.approx(trig(col / freq), abs=1e-12)
            assert pe[idx, half + k] == pytest.approx(trig(row / freq), abs=1e-12)


def test_sine2d_bounded_and_read_only():
    pe = sine2d_embedding(16, 12, 192)
    assert np.all(np.abs(pe) <= 1.0)
    with pytest.raises(ValueError):
        pe[0, 0] = 5.0


# ------------------------------------------------------------ embed_visual


def test_zero_patches_give_zero_tokens():
    cfg = cfg_with(pe_mode="none")
    out = embed_visual(np.zeros((16, 4)), Tensor(np.ones((4, 8))), cfg, bias=Tensor(np.zeros(8)))
    np.testing.assert_array_equal(out.data, np.zeros((16, 8)))


def test_sine_embedding_is_input_independent(rng):
    cfg = cfg_with(pe_mode="sine2d")
    proj = Tensor(rng.normal(size=(4, 8)))
    a, b = rng.normal(size=(16, 4)), rng.normal(size=(16, 4))
    diff = embed_visual(a, proj, cfg).data - embed_visual(b, proj, cfg).data
    np.testing.assert_allclose(diff, (a - b) @ proj.data, atol=1e-12)
    # with zero patches, what remains is the table itself
    np.testing.assert_array_equal(embed_visual(np.zeros((16, 4)), proj, cfg).data,
                                  sine2d_embedding(4, 4, 8))


def test_learnable_embedding_added(rng):
    cfg = cfg_with(pe_mode="learnable")
    pos = Tensor(rng.normal(size=(16, 8)))
    out = embed_visual(np.zeros((16, 4)), Tensor(np.ones((4, 8))), cfg, pos_embed=pos)
    np.testing.assert_array_equal(out.data, pos.data)


def test_embed_visual_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        embed_visual(np.zeros((16, 5)), Tensor(np.ones((4, 8))), cfg_with(pe_mode="none"))


@given(st.permutations(list(range(16))))
def test_embedding_without_pe_commutes_with_permutation(perm):
    cfg = cfg_with(pe_mode="none")
    r = np.random.default_rng(3)
    patches, proj = r.normal(size=(16, 4)), Tensor(r.normal(size=(4, 8)))
    out = embed_visual(patches, proj, cfg).data
    np.testing.assert_array_equal(embed_visual(patches[perm], proj, cfg).data, out[perm])


# --------------------------------------------------------------- conv stem


def test_conv_stem_quarters_resolution():
    cfg = tokenpose_s_v1()
    params = init_params(cfg, seed=0, dtype=np.float32)
    feat = conv_stem(np.zeros((3, 256, 192), dtype=np.float32), params)
    assert feat.shape[1:] == (64, 48)
    assert cfg.grid == (16, 16) and cfg.num_visual == 256


def test_conv_stem_zero_image_zero_bias():
    cfg = cfg_with(channels=3, input_h=16, input_w=16, stem="conv_stem")
    params = init_params(cfg, seed=1, dtype=np.float64)
    out = conv_stem(np.zeros((3, 16, 16)), params)
    np.testing.assert_array_equal(out.data, 0.0)


def test_conv_stem_rejects_indivisible():
    cfg = cfg_with(channels=3, input_h=16, input_w=16, stem="conv_stem")
    params = init_params(cfg, seed=1, dtype=np.float64)
    with pytest.raises(NonDivisible):
        conv_stem(np.zeros((3, 18, 16)), params)


# ---------------------------------------------------------------- assemble


def test_assemble_shape_and_keypoint_rows(rng):
    table = KeypointTokenTable.init(17, 192, rng)
    seq = assemble(table, Tensor(rng.normal(size=(256, 192)).astype(np.float32)))
    assert seq.tokens.shape == (273, 192)
    assert seq.n_keypoint == 17 and seq.n_visual == 256
    assert np.array_equal(seq.keypoint_rows.data, table.embeddings.data)


def test_keypoint_rows_identical_across_images(rng):
    table = KeypointTokenTable.init(4, 8, rng)
    seq = assemble(table, Tensor(rng.normal(size=(3, 10, 8)).astype(np.float32)))
    for b in range(3):
        assert np.array_equal(seq.tokens.data[b, :4], table.embeddings.data)


def test_assemble_width_mismatch(rng):
    with pytest.raises(ShapeMismatch):
        assemble(KeypointTokenTable.init(4, 8, rng), Tensor(np.ones((10, 6))))


def test_shared_table_gradient_is_sum_over_batch(rng):
    emb = rng.normal(size=(3, 4))
    visual = rng.normal(size=(5, 6, 4))
    w = rng.normal(size=(4, 4))

    def loss_for(vis):
        table = KeypointTokenTable(Tensor(emb.copy(), requires_grad=True))
        seq = assemble(table, Tensor(vis))
        T.backward(T.tsum(T.gelu(seq.tokens @ Tensor(w))))
        return table.embeddings.grad

    total = loss_for(visual)
    per_sample = sum(loss_for(visual[i:i + 1]) for i in range(5))
    np.testing.assert_allclose(total, per_sample, rtol=1e-12)


def test_trunc_normal_bounds(rng):
    x = trunc_normal(rng, (20000,))
    assert np.all(np.abs(x) <= 0.04)
    assert abs(x.std() - 0.0176) < 0.001  # std of a 2-sigma truncated normal is 0.88 sigma
