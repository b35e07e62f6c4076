"""Keypoint evaluation: OKS-based average precision and PCKh."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyEvalSet, MissingHeadSize, NoVisibleKeypoints

# COCO per-keypoint falloff constants (sigmas); the OKS constant is k_i = 2 * sigma_i
COCO_SIGMAS = np.array([
    0.26, 0.25, 0.25, 0.35, 0.35, 0.79, 0.79, 0.72, 0.72,
    0.62, 0.62, 1.07, 1.07, 0.87, 0.87, 0.89, 0.89,
]) / 10.0
COCO_K = 2.0 * COCO_SIGMAS
UNIFORM_K = 0.1

OKS_THRESHOLDS = np.round(np.linspace(0.5, 0.95, 10), 2)
RECALL_POINTS = np.linspace(0.0, 1.0, 101)

MPII_GROUPS = {
    "Hea": ["head_top", "upper_neck"],
    "Sho": ["l_shoulder", "r_shoulder"],
    "Elb": ["l_elbow", "r_elbow"],
    "Wri": ["l_wrist", "r_wrist"],
    "Hip": ["l_hip", "r_hip"],
    "Kne": ["l_knee", "r_knee"],
    "Ank": ["l_ankle", "r_ankle"],
}


def default_k(num_keypoints: int) -> np.ndarray:
    """COCO constants for 17 keypoints, a uniform constant otherwise."""
    if num_keypoints == 17:
        return COCO_K.copy()
    return np.full(num_keypoints, UNIFORM_K)


@dataclass
class EvalInstance:
    """One ground-truth person paired with (at most) one prediction.

    ``gt`` is ``[N, 3]`` (x, y, v); ``pred`` is ``[N, 2]`` or ``None`` for a
    missed person. ``score`` is the detection confidence; when omitted it
    is the mean of ``pred_scores``. Instances with the same ``image_id``
    compete for matches in :func:`average_precision`.
    """

    gt: Optional[np.ndarray]
    pred: Optional[np.ndarray]
    scale: float = 1.0
    k: Optional[np.ndarray] = None
    head_size: Optional[float] = None
    score: Optional[float] = None
    pred_scores: Optional[np.ndarray] = None
    image_id: object = 0

    def __post_init__(self):
        if self.gt is not None:
            self.gt = np.asarray(self.gt, dtype=np.float64).reshape(-1, 3)
        if self.pred is not None:
            self.pred = np.asarray(self.pred, dtype=np.float64)[..., :2].reshape(-1, 2)
        if self.scale <= 0:
            raise ValueError("object scale must be positive")
        if self.k is not None:
            self.k = np.asarray(self.k, dtype=np.float64)
            if np.any(self.k <= 0):
                raise ValueError("keypoint constants must be positive")

    @property
    def confidence(self) -> float:
        if self.score is not None:
            return float(self.score)
        if self.pred_scores is not None:
            return float(np.mean(self.pred_scores))
        return 1.0

    def constants(self) -> np.ndarray:
        n = (self.gt if self.gt is not None else self.pred).shape[0]
        return self.k if self.k is not None else default_k(n)


def oks_value(gt, pred, scale: float, k) -> float:
    """``Σ exp(-d_i² / 2s²k_i²)·[v_i>0] / Σ [v_i>0]`` with ``d_i`` the Euclidean error."""
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    vis = gt[:, 2] > 0
    if not vis.any():
        raise NoVisibleKeypoints("OKS needs at least one labeled keypoint")
    d2 = np.sum((pred[:, :2] - gt[:, :2]) ** 2, axis=1)
    k = np.asarray(k, dtype=np.float64)
    e = np.exp(-d2 / (2.0 * scale * scale * k * k))
    return float(e[vis].sum() / vis.sum())


def oks(inst: EvalInstance) -> float:
    return oks_value(inst.gt, inst.pred, inst.scale, inst.constants())


def _group(instances):
    images = {}
    for inst in instances:
        entry = images.setdefault(inst.image_id, {"gts": [], "dets": []})
        if inst.gt is not None and (inst.gt[:, 2] > 0).any():
            entry["gts"].append(inst)
        if inst.pred is not None:
            entry["dets"].append(inst)
    return images


def _oks_matrix(dets, gts) -> np.ndarray:
    out = np.zeros((len(dets), len(gts)))
    for i, d in enumerate(dets):
        for j, g in enumerate(gts):
            out[i, j] = oks_value(g.gt, d.pred, g.scale, g.constants())
    return out


def greedy_match(ious: np.ndarray, threshold: float) -> np.ndarray:
    """Match detections (rows, in descending confidence) to ground truths.

    Each detection takes the still-unmatched ground truth with the highest
    OKS, provided that OKS is at least ``threshold``. Returns a boolean
    true-positive flag per detection.
    """
    n_det, n_gt = ious.shape
    taken = np.zeros(n_gt, dtype=bool)
    tp = np.zeros(n_det, dtype=bool)
    for i in range(n_det):
        best, best_j = threshold, -1
        for j in range(n_gt):
            if not taken[j] and ious[i, j] >= best:
                if best_j < 0 or ious[i, j] > best:
                    best, best_j = ious[i, j], j
        if best_j >= 0:
            taken[best_j] = True
            tp[i] = True
    return tp


def interpolated_precision(tp_sorted: np.ndarray, n_pos: int,
                           recall_points=RECALL_POINTS) -> tuple:
    """101-point interpolated precision and the maximal recall of a ranked list."""
    if n_pos == 0:
        return np.zeros(len(recall_points)), 0.0
    tps = np.cumsum(tp_sorted).astype(np.float64)
    fps = np.cumsum(~tp_sorted).astype(np.float64)
    if tps.size == 0:
        return np.zeros(len(recall_points)), 0.0
    recall = tps / n_pos
    precision = tps / np.maximum(tps + fps, np.finfo(np.float64).eps)
    for i in range(precision.size - 1, 0, -1):
        if precision[i] > precision[i - 1]:
            precision[i - 1] = precision[i]
    idx = np.searchsorted(recall, recall_points, side="left")
    q = np.zeros(len(recall_points))
    valid = idx < recall.size
    q[valid] = precision[idx[valid]]
    return q, float(recall[-1])


@dataclass
class APSummary:
    ap: float
    ap50: float
    ap75: float
    ar: float
    per_threshold: dict
    recall_per_threshold: dict

    def to_dict(self) -> dict:
        return {"AP": self.ap, "AP50": self.ap50, "AP75": self.ap75, "AR": self.ar,
                "per_threshold": {f"{t:.2f}": v for t, v in self.per_threshold.items()}}


def average_precision(instances: Sequence[EvalInstance], thresholds=None) -> APSummary:
    """COCO-style keypoint AP over OKS thresholds 0.50:0.05:0.95.

    Within each image, detections are matched greedily in descending
    confidence. Across images, detections are ranked by confidence (stable
    for ties) and precision is interpolated at 101 recall points.
    """
    thresholds = OKS_THRESHOLDS if thresholds is None else np.asarray(thresholds)
    images = _group(instances)
    n_pos = sum(len(e["gts"]) for e in images.values())
    n_det = sum(len(e["dets"]) for e in images.values())
    if n_pos == 0 and n_det == 0:
        raise EmptyEvalSet("no ground truths and no detections to evaluate")

    per_image = []
    for entry in images.values():
        dets = sorted(entry["dets"], key=lambda d: -d.confidence)
        per_image.append((dets, _oks_matrix(dets, entry["gts"])))

    per_threshold, recalls = {}, {}
    for t in thresholds:
        scores, flags = [], []
        for dets, ious in per_image:
            tp = greedy_match(ious, float(t))
            scores.extend(d.confidence for d in dets)
            flags.extend(tp.tolist())
        order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="mergesort")
        tp_sorted = np.asarray(flags, dtype=bool)[order]
        q, r = interpolated_precision(tp_sorted, n_pos)
        per_threshold[float(t)] = float(q.mean())
        recalls[float(t)] = r

    def at(value):
        for t, v in per_threshold.items():
            if abs(t - value) < 1e-9:
                return v
        return float("nan")

    return APSummary(
        ap=float(np.mean(list(per_threshold.values()))),
        ap50=at(0.5), ap75=at(0.75),
        ar=float(np.mean(list(recalls.values()))),
        per_threshold=per_threshold, recall_per_threshold=recalls,
    )


@dataclass
class PCKhResult:
    per_joint: np.ndarray
    counts: np.ndarray
    mean: float
    alpha: float

    def grouped(self, names: Sequence[str], groups: Optional[dict] = None) -> dict:
        """Percentages per named group (by default the MPII table columns) plus Mean."""
        groups = MPII_GROUPS if groups is None else groups
        index = {n: i for i, n in enumerate(names)}
        out = {}
        for label, members in groups.items():
            idx = [index[m] for m in members if m in index]
            c = self.counts[idx].sum() if idx else 0
            if c:
                out[label] = float(np.sum(self.per_joint[idx] * self.counts[idx]) / c)
        out["Mean"] = self.mean
        return out

    def to_dict(self, names=None) -> dict:
        names = names or [f"kp{i}" for i in range(len(self.per_joint))]
        return {"alpha": self.alpha, "mean": self.mean,
                "per_joint": {n: (None if np.isnan(v) else float(v))
                              for n, v in zip(names, self.per_joint)}}


def pckh(instances: Sequence[EvalInstance], alpha: float = 0.5) -> PCKhResult:
    """Percentage of labeled joints within ``alpha * head_size`` (boundary inclusive)."""
    if not instances:
        raise EmptyEvalSet("no instances")
    n = instances[0].gt.shape[0]
    correct = np.zeros(n)
    counts = np.zeros(n)
    for inst in instances:
        if inst.head_size is None or inst.head_size <= 0:
            raise MissingHeadSize(f"instance of image {inst.image_id!r} has no head size")
        labeled = inst.gt[:, 2] > 0
        if inst.pred is None:
            counts += labeled
            continue
        dist = np.hypot(*(inst.pred[:, :2] - inst.gt[:, :2]).T)
        correct += labeled & (dist <= alpha * inst.head_size)
        counts += labeled
    with np.errstate(invalid="ignore", divide="ignore"):
        per_joint = np.where(counts > 0, 100.0 * correct / np.maximum(counts, 1), np.nan)
    mean = 100.0 * correct.sum() / counts.sum() if counts.sum() else float("nan")
    return PCKhResult(per_joint, counts, float(mean), alpha)


def format_table(header: Sequence[str], rows: Sequence[Sequence], floatfmt: str = "{:.1f}") -> str:
    """Aligned plain-text table."""
    cells = [[str(h) for h in header]]
    for row in rows:
        cells.append([floatfmt.format(v) if isinstance(v, float) else str(v) for v in row])
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = [" | ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines)
