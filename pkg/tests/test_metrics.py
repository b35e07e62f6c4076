import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ap_oracle, oks_loop, random_micro_set
from tokenpose.errors import EmptyEvalSet, MissingHeadSize, NoVisibleKeypoints
from tokenpose.metrics import (
    COCO_K,
    OKS_THRESHOLDS,
    EvalInstance,
    average_precision,
    default_k,
    format_table,
    greedy_match,
    oks,
    oks_value,
    pckh,
)

# -------------------------------------------------------------------- OKS


def test_oks_perfect_is_one():
    gt = np.array([[10.0, 10.0, 2], [20.0, 5.0, 1]])
    assert oks(EvalInstance(gt=gt, pred=gt[:, :2], scale=30.0)) == 1.0


def test_oks_e_minus_one_case():
    s, k = 25.0, 0.1
    d = s * k * math.sqrt(2)
    gt = np.array([[10.0, 10.0, 2]])
    pred = np.array([[10.0 + d * 0.6, 10.0 + d * 0.8]])
    assert abs(oks_value(gt, pred, s, [k]) - math.exp(-1)) < 1e-9
    assert oks_value(gt, pred, s, [k]) == pytest.approx(0.3679, abs=5e-5)


def test_oks_ignores_unlabeled_keypoints():
    gt = np.array([[0.0, 0.0, 2], [5.0, 5.0, 0]])
    pred = np.array([[0.0, 0.0], [900.0, -40.0]])
    assert oks_value(gt, pred, 10.0, [0.1, 0.1]) == 1.0


def test_oks_no_visible_raises():
    with pytest.raises(NoVisibleKeypoints):
        oks_value(np.array([[1.0, 1.0, 0]]), np.zeros((1, 2)), 10.0, [0.1])


@given(st.integers(0, 2**31), st.floats(0.1, 20.0))
def test_oks_scale_invariance(seed, factor):
    r = np.random.default_rng(seed)
    gt = np.column_stack([r.uniform(0, 50, 5), r.uniform(0, 50, 5), np.full(5, 2)])
    pred = gt[:, :2] + r.normal(0, 3, (5, 2))
    k = r.uniform(0.05, 0.2, 5)
    a = oks_value(gt, pred, 20.0, k)
    scaled = gt.copy()
    scaled[:, :2] *= factor
    b = oks_value(scaled, pred * factor, 20.0 * factor, k)
    assert b == pytest.approx(a, rel=1e-9, abs=1e-12)


@given(st.integers(0, 2**31))
def test_oks_matches_loop_oracle(seed):
    r = np.random.default_rng(seed)
    gt = np.column_stack([r.uniform(0, 50, 6), r.uniform(0, 50, 6), r.integers(0, 3, 6)])
    gt[0, 2] = 1
    pred = r.uniform(0, 50, (6, 2))
    k = r.uniform(0.05, 0.2, 6)
    assert oks_value(gt, pred, 17.0, k) == pytest.approx(oks_loop(gt, pred, 17.0, k), abs=1e-12)


def test_default_constants():
    assert np.allclose(default_k(17), COCO_K)
    assert COCO_K[0] == pytest.approx(0.052)
    assert np.all(default_k(8) == 0.1)


# --------------------------------------------------------------------- AP


def _single(offset, s=20.0, k=0.1, n=3, score=0.9, image_id=0):
    gt = np.column_stack([np.arange(n) * 10.0, np.arange(n) * 5.0, np.full(n, 2)])
    return EvalInstance(gt=gt, pred=gt[:, :2] + offset, scale=s, k=np.full(n, k),
                        score=score, image_id=image_id)


def test_ap_perfect_predictions():
    insts = [_single(0.0, image_id=i) for i in range(4)]
    res = average_precision(insts)
    assert res.ap == 1.0 and all(v == 1.0 for v in res.per_threshold.values())
    assert res.ar == 1.0


def test_ap_far_predictions_score_zero():
    s, k = 20.0, 0.1
    insts = [_single(np.array([s * k * 4.5, 0.0]), s=s, k=k, image_id=i) for i in range(3)]
    assert all(oks(i) < 0.5 for i in insts)
    res = average_precision(insts)
    assert res.ap == 0.0 and res.ap50 == 0.0


def test_ap_single_instance_oks_point_six():
    s, k = 20.0, 0.1
    d = s * k * math.sqrt(-2 * math.log(0.6))
    inst = _single(np.array([d, 0.0]), s=s, k=k, n=1)
    assert oks(inst) == pytest.approx(0.6, abs=1e-12)
    res = average_precision([inst])
    assert res.ap50 == 1.0 and res.ap75 == 0.0
    # 0.50 and 0.55 match; 0.60 sits on the boundary, which counts when reached
    expected = 0.3 if oks(inst) >= 0.6 else 0.2
    assert res.ap == pytest.approx(expected)


def test_ap_empty_raises():
    with pytest.raises(EmptyEvalSet):
        average_precision([])


def test_threshold_boundary_counts_as_match():
    inst = _single(np.array([3.0, 4.0]), n=1)
    assert average_precision([inst], thresholds=[oks(inst)]).ap == 1.0


def test_unlabeled_gt_not_counted():
    ghost = EvalInstance(gt=np.array([[1.0, 1.0, 0]]), pred=None, image_id=1)
    assert average_precision([_single(0.0), ghost]).ap == 1.0


def test_greedy_match_takes_best_available():
    ious = np.array([[0.9, 0.8],
                     [0.95, 0.6]])
    # the first detection grabs GT 0, the second falls back to GT 1
    assert greedy_match(ious, 0.5).tolist() == [True, True]
    assert greedy_match(ious, 0.7).tolist() == [True, False]


def test_duplicate_detection_is_false_positive():
    base = _single(0.0)
    dup = EvalInstance(gt=None, pred=base.pred, score=0.5, k=base.k)
    res = average_precision([base, dup])
    # the duplicate ranks last, so precision at full recall is still 1
    assert res.ap == 1.0
    low_first = EvalInstance(gt=None, pred=base.pred + 50, score=0.95, k=base.k)
    assert average_precision([base, low_first]).ap == pytest.approx(0.5, abs=0.01)


@settings(max_examples=60)
@given(st.integers(0, 2**31))
def test_ap_matches_brute_force(seed):
    images, instances = random_micro_set(np.random.default_rng(seed))
    res = average_precision(instances)
    per_t, recalls = ap_oracle(images, OKS_THRESHOLDS)
    assert list(res.per_threshold.values()) == per_t
    assert list(res.recall_per_threshold.values()) == recalls
    assert res.ap == float(np.mean(per_t))


@given(st.integers(0, 2**31))
def test_ap_non_increasing_in_threshold(seed):
    _, instances = random_micro_set(np.random.default_rng(seed))
    values = list(average_precision(instances).per_threshold.values())
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_confidence_defaults_to_mean_keypoint_score():
    inst = EvalInstance(gt=None, pred=np.zeros((2, 2)), pred_scores=np.array([0.2, 0.6]))
    assert inst.confidence == pytest.approx(0.4)


# ------------------------------------------------------------------ PCKh


def _pck_inst(dists, g=10.0, vis=None):
    n = len(dists)
    vis = np.full(n, 2) if vis is None else np.asarray(vis)
    gt = np.column_stack([np.arange(n) * 20.0, np.zeros(n), vis])
    pred = gt[:, :2] + np.column_stack([dists, np.zeros(n)])
    return EvalInstance(gt=gt, pred=pred, head_size=g)


def test_pckh_perfect():
    res = pckh([_pck_inst([0.0] * 4)])
    assert res.mean == 100.0 and np.all(res.per_joint == 100.0)


def test_pckh_boundary_inclusive():
    res = pckh([_pck_inst([5.0, 5.0, 5.0], g=10.0)], alpha=0.5)
    assert res.mean == 100.0


def test_pckh_two_of_three():
    res = pckh([_pck_inst([4.0, 5.0, 6.0], g=10.0)])
    assert res.mean == pytest.approx(200 / 3)
    assert res.per_joint.tolist() == [100.0, 100.0, 0.0]


def test_pckh_missing_head_size():
    with pytest.raises(MissingHeadSize):
        pckh([EvalInstance(gt=np.zeros((2, 3)), pred=np.zeros((2, 2)))])


@given(st.integers(0, 2**31), st.integers(1, 4))
def test_pckh_invariant_to_unlabeled_joints(seed, extra):
    r = np.random.default_rng(seed)
    base = [_pck_inst(r.uniform(0, 10, 5)) for _ in range(3)]
    padded = []
    for inst in base:
        gt = np.vstack([inst.gt, np.column_stack([r.uniform(0, 9, (extra, 2)), np.zeros(extra)])])
        pred = np.vstack([inst.pred, r.uniform(0, 99, (extra, 2))])
        padded.append(EvalInstance(gt=gt, pred=pred, head_size=inst.head_size))
    a, b = pckh(base), pckh(padded)
    assert a.mean == b.mean
    np.testing.assert_array_equal(a.per_joint, b.per_joint[:5])


def test_pckh_grouped_table():
    names = ["head_top", "upper_neck", "l_shoulder", "r_shoulder"]
    res = pckh([_pck_inst([0.0, 9.0, 0.0, 0.0])])
    grouped = res.grouped(names)
    assert grouped["Hea"] == 50.0 and grouped["Sho"] == 100.0
    assert grouped["Mean"] == 75.0


def test_format_table_alignment():
    text = format_table(["Hea", "Mean"], [[97.25, 90.0]])
    lines = text.splitlines()
    assert len(lines) == 3 and len({len(l) for l in lines}) == 1
    assert "97.2" in lines[2] or "97.3" in lines[2]
