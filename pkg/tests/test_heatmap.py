import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tokenpose import tensor as T
from tokenpose.errors import AllInvisibleWarning, ShapeMismatch
from tokenpose.gradcheck import gradcheck
from tokenpose.heatmap import (
    decode,
    export_heatmaps_pgm,
    gaussian_target,
    head_forward,
    make_targets,
    mse_loss,
    read_heatmaps_raw,
    write_heatmaps_raw,
    write_pgm16,
)
from tokenpose.tensor import Tensor

# ------------------------------------------------------------------- head


def test_head_zero_weights_give_zero_maps():
    out = head_forward(np.ones((3, 4)), np.zeros((4, 6)), np.zeros(6), (2, 3))
    np.testing.assert_array_equal(out.data, np.zeros((3, 2, 3)))


def test_head_output_length_for_table_config():
    out = head_forward(np.zeros((17, 192)), np.zeros((192, 64 * 48)), None, (64, 48))
    assert out.shape == (17, 64, 48) and 64 * 48 == 3072


def test_head_hand_oracle():
    tokens = np.array([[1.0, 2.0], [-1.0, 0.5]])
    weight = np.array([[1.0, 0.0, 2.0, -1.0],
                       [0.5, 1.0, 0.0, 3.0]])
    bias = np.array([0.0, 1.0, 0.0, -1.0])
    # row 0: [1+1, 0+2+1, 2, -1+6-1]; row 1: [-1+0.25, 0.5+1, -2, 1+1.5-1]
    expected = np.array([[[2.0, 3.0], [2.0, 4.0]],
                         [[-0.75, 1.5], [-2.0, 1.5]]])
    np.testing.assert_allclose(head_forward(tokens, weight, bias, (2, 2)).data, expected)


def test_head_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        head_forward(np.zeros((2, 5)), np.zeros((4, 4)), None, (2, 2))


def test_head_gradcheck(rng):
    def fn(tok, w, b):
        return head_forward(tok, w, b, (2, 3))
    result = gradcheck(fn, [rng.normal(size=(3, 4)), rng.normal(size=(4, 6)), rng.normal(size=6)])
    assert result.passed(1e-4)


# ----------------------------------------------------------------- target


def test_gaussian_peak_is_one():
    g = gaussian_target((3, 3), 2.0, (8, 8))
    assert g[3, 3] == 1.0
    assert g.max() == 1.0


def test_gaussian_value_one_sigma_away():
    g = gaussian_target((3, 3), 2.0, (8, 8))
    assert g[3, 5] == pytest.approx(math.exp(-0.5), abs=1e-15)
    assert g[5, 3] == pytest.approx(0.6065, abs=1e-4)


@given(st.integers(-5, 5), st.integers(-5, 5))
def test_gaussian_symmetric(dx, dy):
    g = gaussian_target((8, 8), 2.0, (17, 17))
    assert g[8 + dy, 8 + dx] == g[8 - dy, 8 - dx]


def test_gaussian_rejects_nonpositive_sigma():
    with pytest.raises(ValueError):
        gaussian_target((1, 1), 0.0, (4, 4))


def test_make_targets_stride_and_masking():
    kps = np.array([[16.0, 8.0, 2], [40.0, 40.0, 0], [500.0, 4.0, 2]])
    maps, weights = make_targets(kps, (64, 64), (16, 16), sigma=2.0)
    assert list(weights) == [1.0, 0.0, 0.0]
    assert maps[0, 2, 4] == 1.0
    assert not maps[1].any() and not maps[2].any()


# ------------------------------------------------------------------- loss


def test_loss_zero_on_match(rng):
    t = rng.random((2, 3, 4, 4))
    assert float(mse_loss(Tensor(t), t, np.ones((2, 3))).data) == 0.0


def test_loss_constant_offset():
    t = np.zeros((3, 4, 4))
    assert float(mse_loss(Tensor(t + 1.0), t, np.ones(3)).data) == 1.0


def test_loss_half_pixels_off_by_two():
    target = np.zeros((1, 4, 4))
    pred = target.copy()
    pred[0, :2] += 2.0
    assert float(mse_loss(Tensor(pred), target, [1]).data) == 2.0


def test_loss_all_invisible_warns():
    with pytest.warns(AllInvisibleWarning):
        loss = mse_loss(Tensor(np.ones((2, 3, 3))), np.zeros((2, 3, 3)), [0, 0])
    assert float(loss.data) == 0.0


def test_loss_ignores_invisible_prediction_values(rng):
    target = rng.random((3, 4, 4))
    pred = rng.random((3, 4, 4))
    vis = np.array([2, 0, 1])
    base = float(mse_loss(Tensor(pred), target, vis).data)
    for junk in (1e6, -3.0, np.nan):
        other = pred.copy()
        other[1] = junk
        assert float(mse_loss(Tensor(other), target, vis).data) == base
    # the denominator counts labeled maps only
    expected = (np.mean((pred[0] - target[0]) ** 2) + np.mean((pred[2] - target[2]) ** 2)) / 2
    assert base == pytest.approx(expected, rel=1e-12)


@given(st.integers(0, 2**31))
def test_loss_nonnegative_and_zero_iff_equal(seed):
    r = np.random.default_rng(seed)
    target = r.random((3, 4, 4))
    pred = target + (r.random((3, 4, 4)) < 0.3) * r.normal(size=(3, 4, 4))
    vis = r.integers(0, 3, size=3)
    if not vis.any():
        vis[0] = 1
    loss = float(mse_loss(Tensor(pred), target, vis).data)
    assert loss >= 0
    equal = all(np.array_equal(pred[i], target[i]) for i in range(3) if vis[i] > 0)
    assert (loss == 0) == equal


def test_loss_gradient_masks_invisible(rng):
    pred = Tensor(rng.random((2, 3, 3)), requires_grad=True)
    T.backward(mse_loss(pred, np.zeros((2, 3, 3)), [1, 0]))
    assert not pred.grad[1].any() and pred.grad[0].all()


# ----------------------------------------------------------------- decode


@pytest.mark.parametrize("mode", ["argmax", "subpixel"])
def test_decode_one_hot(mode):
    hm = np.zeros((1, 8, 8))
    hm[0, 5, 2] = 1.0
    pose = decode(hm, mode)
    np.testing.assert_array_equal(pose.coords[0], [2.0, 5.0])
    assert pose.scores[0] == 1.0


@pytest.mark.parametrize("mode", ["argmax", "subpixel"])
def test_decode_integral_gaussian_center(mode):
    hm = gaussian_target((6, 9), 2.0, (16, 16))[None]
    np.testing.assert_allclose(decode(hm, mode).coords[0], [6.0, 9.0], atol=1e-9)


def test_decode_offgrid_center():
    hm = gaussian_target((10.3, 20.7), 2.0, (32, 32))[None]
    sub = decode(hm, "subpixel").coords[0]
    arg = decode(hm, "argmax").coords[0]
    assert np.abs(sub - [10.3, 20.7]).max() < 0.05
    assert np.abs(arg - [10.3, 20.7]).max() <= 0.5


def test_decode_argmax_tie_takes_first_row_major():
    hm = np.zeros((1, 4, 4))
    hm[0, 1, 3] = hm[0, 2, 0] = 1.0
    np.testing.assert_array_equal(decode(hm, "argmax").coords[0], [3.0, 1.0])


def test_decode_border_peak_falls_back():
    hm = gaussian_target((0.3, 5.2), 2.0, (12, 12))[None]
    np.testing.assert_array_equal(decode(hm, "subpixel").coords[0], [0.0, 5.0])


def test_decode_flat_map_falls_back():
    hm = np.full((1, 6, 6), 0.25)
    np.testing.assert_array_equal(decode(hm, "subpixel").coords[0], [0.0, 0.0])


def test_decode_scales_to_input_pixels():
    hm = np.zeros((1, 16, 12))
    hm[0, 4, 3] = 1.0
    np.testing.assert_array_equal(decode(hm, "argmax", (64, 48)).coords[0], [12.0, 16.0])


def test_decode_batched_shapes():
    pose = decode(np.random.default_rng(0).random((2, 5, 8, 8)))
    assert pose.coords.shape == (2, 5, 2) and pose.scores.shape == (2, 5)


@given(st.floats(1.0, 30.0), st.floats(1.0, 22.0))
def test_decode_recovers_gaussian_center(x, y):
    hm = gaussian_target((x, y), 2.0, (24, 32))[None]
    assert np.abs(decode(hm, "subpixel").coords[0] - [x, y]).max() < 0.05


# ----------------------------------------------------------------- export


def test_pgm16_layout(tmp_path):
    plane = np.array([[0.0, 0.5], [1.0, 0.25], [0.75, 1.0]])
    write_pgm16(tmp_path / "a.pgm", plane)
    raw = (tmp_path / "a.pgm").read_bytes()
    header = b"P5\n2 3\n65535\n"
    assert raw.startswith(header)
    pixels = np.frombuffer(raw[len(header):], dtype=">u2").reshape(3, 2)
    assert pixels.min() == 0 and pixels.max() == 65535
    assert pixels[0, 1] == round(0.5 * 65535)


def test_export_heatmaps_pgm_one_file_per_map(tmp_path):
    paths = export_heatmaps_pgm(np.random.default_rng(0).random((3, 4, 5)), tmp_path)
    assert [p.name for p in paths] == ["heatmap_00.pgm", "heatmap_01.pgm", "heatmap_02.pgm"]


def test_raw_round_trip(tmp_path, rng):
    maps = rng.normal(size=(3, 4, 5)).astype(np.float32)
    write_heatmaps_raw(tmp_path / "h.raw", maps)
    assert (tmp_path / "h.raw").read_bytes().startswith(b"4 5 3\n")
    np.testing.assert_array_equal(read_heatmaps_raw(tmp_path / "h.raw"), maps)
