import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tokenpose.checkpoint import encode_entries, load_checkpoint
from tokenpose.config import ModelConfig
from tokenpose.data import SynthConfig, generate_synthetic
from tokenpose.errors import BatchError, ConfigError, ShapeMismatch
from tokenpose.train import AdamState, TrainConfig, adam_step, lr_at, thread_limit, train


def small_cfg(**kw):
    model = ModelConfig(input_h=64, input_w=64, channels=3, patch_h=16, patch_w=16,
                        embed_dim=16, num_layers=1, num_heads=2, num_keypoints=8,
                        heatmap_h=16, heatmap_w=16, mlp_ratio=2.0, pe_mode="sine2d")
    base = dict(model=model, train_count=8, val_count=4, batch_size=4, epochs=2,
                lr_drop_epochs=[1], eval_every=1)
    base.update(kw)
    return TrainConfig(**base)


# ------------------------------------------------------------------- Adam


def test_adam_zero_gradient_keeps_params_and_decays_moments():
    p = {"w": np.array([1.0, -2.0])}
    state = AdamState(m={"w": np.array([0.4, 0.2])}, v={"w": np.array([0.01, 0.04])}, t=3)
    adam_step(p, {"w": np.zeros(2)}, state, lr=0.0)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    np.testing.assert_allclose(state.m["w"], [0.36, 0.18])
    np.testing.assert_allclose(state.v["w"], [0.01 * 0.999, 0.04 * 0.999])


def test_adam_zero_gradient_from_fresh_state_is_no_op():
    p = {"w": np.array([3.0])}
    adam_step(p, {"w": np.zeros(1)}, AdamState(), lr=1e-3)
    assert p["w"][0] == 3.0


def test_adam_first_and_second_step_by_hand():
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    p = {"w": np.array([0.25])}
    state = AdamState()
    adam_step(p, {"w": np.array([0.5])}, state, lr)
    # m = 0.05, v = 0.00025; corrected: 0.5 and 0.25, so the step is lr * 0.5 / (0.5 + eps)
    first = 0.25 - lr * 0.5 / (0.5 + eps)
    assert p["w"][0] == pytest.approx(first, abs=1e-15)
    assert abs(0.25 - p["w"][0]) == pytest.approx(lr, rel=1e-7)

    adam_step(p, {"w": np.array([-1.0])}, state, lr)
    m = b1 * 0.05 + (1 - b1) * -1.0
    v = b2 * 0.00025 + (1 - b2) * 1.0
    m_hat, v_hat = m / (1 - b1 ** 2), v / (1 - b2 ** 2)
    second = first - lr * m_hat / (math.sqrt(v_hat) + eps)
    assert p["w"][0] == pytest.approx(second, abs=1e-15)


def test_adam_groups_independent(rng):
    a, b = rng.normal(size=3), rng.normal(size=(2, 2))
    ga, gb = rng.normal(size=3), rng.normal(size=(2, 2))
    joint = {"a": a.copy(), "b": b.copy()}
    adam_step(joint, {"a": ga, "b": gb}, AdamState(), 0.01)
    only_a = {"a": a.copy()}
    adam_step(only_a, {"a": ga}, AdamState(), 0.01)
    np.testing.assert_array_equal(joint["a"], only_a["a"])


def test_adam_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        adam_step({"w": np.zeros(3)}, {"w": np.zeros(2)}, AdamState(), 0.1)


def test_adam_missing_gradient_counts_as_zero():
    p = {"w": np.ones(2), "u": np.ones(2)}
    adam_step(p, {"w": np.ones(2)}, AdamState(), 0.1)
    np.testing.assert_array_equal(p["u"], [1.0, 1.0])


# ---------------------------------------------------------- LR schedule


def _schedule(**kw):
    return TrainConfig(**{"epochs": 300, "lr_drop_epochs": [200, 260], **kw})


def test_lr_schedule_points():
    cfg = _schedule()
    assert lr_at(0, cfg) == 1e-3
    assert lr_at(199, cfg) == 1e-3
    assert lr_at(200, cfg) == pytest.approx(1e-4, rel=1e-12)
    assert lr_at(259, cfg) == pytest.approx(1e-4, rel=1e-12)
    assert lr_at(260, cfg) == pytest.approx(1e-5, rel=1e-12)


def test_lr_negative_epoch():
    with pytest.raises(ValueError):
        lr_at(-1, _schedule())


@given(st.lists(st.integers(0, 299), min_size=0, max_size=4, unique=True),
       st.integers(0, 298))
def test_lr_non_increasing(drops, epoch):
    cfg = _schedule(lr_drop_epochs=sorted(drops))
    assert lr_at(epoch + 1, cfg) <= lr_at(epoch, cfg)


# --------------------------------------------------------------- config


@pytest.mark.parametrize("kw", [
    dict(batch_size=0),
    dict(lr_drop_epochs=[5, 3]),
    dict(epochs=10, lr_drop_epochs=[10]),
    dict(train_seed=4, val_seed=4),
    dict(crop="center"),
    dict(betas=(0.9, 1.0)),
])
def test_train_config_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_train_config_json_round_trip():
    cfg = small_cfg(synthetic=SynthConfig(occlusion_rate=0.2))
    again = TrainConfig.from_json(cfg.to_json())
    assert again == cfg
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({**cfg.to_dict(), "momentum": 0.9})


def test_thread_env_validation(monkeypatch):
    monkeypatch.setenv("TOKENPOSE_THREADS", "zero")
    with pytest.raises(ConfigError):
        with thread_limit():
            pass
    monkeypatch.setenv("TOKENPOSE_THREADS", "1")
    with thread_limit():
        pass


# ----------------------------------------------------------------- loop


def test_one_epoch_on_four_samples_gives_positive_loss():
    res = train(small_cfg(train_count=4, val_count=0, epochs=1, lr_drop_epochs=[]))
    [rec] = res.log
    assert math.isfinite(rec["train_loss"]) and rec["train_loss"] > 0
    assert res.checkpoint.step == 1


def test_log_and_checkpoint_files(tmp_path):
    cfg = small_cfg(out_dir=str(tmp_path), checkpoint_every=1)
    res = train(cfg)
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert len(lines) == 2 == len(res.log)
    rec = json.loads(lines[-1])
    assert {"epoch", "step", "lr", "train_loss", "val_pckh", "val_ap", "val_mean_error"} <= set(rec)
    assert rec["lr"] == pytest.approx(1e-4)
    assert (tmp_path / "epoch_0001.tkpz").exists() and (tmp_path / "epoch_0002.tkpz").exists()
    assert TrainConfig.from_json((tmp_path / "config.json").read_text()) == cfg
    final = load_checkpoint(tmp_path / "final.tkpz")
    assert final.step == 4
    for name, p in res.model.params.items():
        assert np.array_equal(final.params[name], p.data)
    assert not list(tmp_path.glob("*.tmp"))


def test_last_partial_batch_is_kept():
    res = train(small_cfg(train_count=6, val_count=0, epochs=1, lr_drop_epochs=[]))
    assert res.checkpoint.step == 2


def test_training_bitwise_deterministic():
    cfg = small_cfg(attn_dropout=0.1, mlp_dropout=0.1)
    a, b = train(cfg), train(cfg)
    assert encode_entries(a.checkpoint.to_entries()) == encode_entries(b.checkpoint.to_entries())


def test_resume_matches_uninterrupted_run():
    full = train(small_cfg(epochs=3, lr_drop_epochs=[2], attn_dropout=0.1, val_count=0))
    half = train(small_cfg(epochs=3, lr_drop_epochs=[2], attn_dropout=0.1, val_count=0,
                           max_steps=3))
    assert half.checkpoint.step == 3
    resumed = train(small_cfg(epochs=3, lr_drop_epochs=[2], attn_dropout=0.1, val_count=0),
                    resume=half.checkpoint)
    assert resumed.checkpoint.step == full.checkpoint.step == 6
    for name in full.checkpoint.params:
        assert np.array_equal(full.checkpoint.params[name], resumed.checkpoint.params[name])
        assert np.array_equal(full.checkpoint.adam_v[name], resumed.checkpoint.adam_v[name])


def test_flip_augmentation_runs_and_differs():
    plain = train(small_cfg(val_count=0))
    flipped = train(small_cfg(val_count=0, flip=True))
    key = "head.weight"
    assert not np.array_equal(plain.checkpoint.params[key], flipped.checkpoint.params[key])


def test_failing_batch_names_its_samples():
    samples = generate_synthetic(1, 4)
    samples[2].image = np.full_like(samples[2].image, np.nan)
    with pytest.raises(BatchError) as info:
        train(small_cfg(epochs=1, lr_drop_epochs=[]), train_samples=samples, val_samples=[])
    assert samples[2].id in str(info.value)
    assert info.value.step == 0


def test_target_pckh_stops_early():
    res = train(small_cfg(epochs=5, lr_drop_epochs=[], target_pckh=0.0))
    assert res.stopped_early and len(res.log) == 1


def test_bbox_crop_mode():
    res = train(small_cfg(crop="bbox", epochs=1, lr_drop_epochs=[]))
    assert math.isfinite(res.log[0]["val_mean_error"])
