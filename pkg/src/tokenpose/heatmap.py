"""Keypoint-token heatmap head, Gaussian targets, masked MSE and coordinate decoding."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import AllInvisibleWarning, ShapeMismatch
from .tensor import Tensor

DEFAULT_SIGMA = 2.0
LOG_FLOOR = 1e-10


def head_forward(kp_tokens, weight, bias, heatmap_size) -> Tensor:
    """Linear map of each keypoint token to ``Ĥ·Ŵ`` values, reshaped row-major."""
    kp_tokens, weight = T.as_tensor(kp_tokens), T.as_tensor(weight)
    hh, hw = heatmap_size
    if weight.shape != (kp_tokens.shape[-1], hh * hw):
        raise ShapeMismatch(
            f"head weight {weight.shape} does not map width {kp_tokens.shape[-1]} "
            f"to {hh}x{hw} heatmaps"
        )
    out = kp_tokens @ weight
    if bias is not None:
        out = out + bias
    return out.reshape(*kp_tokens.shape[:-1], hh, hw)


def gaussian_target(coord, sigma: float, size) -> np.ndarray:
    """``exp(-|p - coord|² / 2σ²)`` sampled at integer pixel positions of an ``(H, W)`` map."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    hh, hw = size
    x, y = float(coord[0]), float(coord[1])
    gx = np.exp(-((np.arange(hw) - x) ** 2) / (2.0 * sigma * sigma))
    gy = np.exp(-((np.arange(hh) - y) ** 2) / (2.0 * sigma * sigma))
    return np.outer(gy, gx)


def make_targets(keypoints, input_size, heatmap_size, sigma: float = DEFAULT_SIGMA,
                 quantize: bool = False):
    """Target heatmaps and loss weights for ``[N,3]`` keypoints in input pixels.

    Keypoint coordinates are divided by the input/heatmap stride. Unlabeled
    keypoints, and keypoints falling off the heatmap, get an all-zero map
    and weight 0. With ``quantize`` the peak is snapped to the nearest pixel.
    """
    kps = np.asarray(keypoints, dtype=np.float64)
    ih, iw = input_size
    hh, hw = heatmap_size
    sx, sy = iw / hw, ih / hh
    maps = np.zeros((kps.shape[0], hh, hw))
    weights = np.zeros(kps.shape[0])
    for i, (x, y, v) in enumerate(kps):
        cx, cy = x / sx, y / sy
        if quantize:
            cx, cy = np.round(cx), np.round(cy)
        if v <= 0 or not (-0.5 <= cx <= hw - 0.5 and -0.5 <= cy <= hh - 0.5):
            continue
        maps[i] = gaussian_target((cx, cy), sigma, (hh, hw))
        weights[i] = 1.0
    return maps, weights


def mse_loss(pred: Tensor, target, vis) -> Tensor:
    """Mean over labeled keypoints of the per-map mean squared error.

    ``pred`` is ``[..., N, H, W]``; ``vis`` has shape ``[..., N]`` and only
    entries > 0 contribute, both to the sum and to the count.
    """
    pred = T.as_tensor(pred)
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    mask = (np.asarray(vis) > 0).astype(pred.dtype)
    if mask.shape != pred.shape[:-2]:
        raise ShapeMismatch(f"visibility {mask.shape} vs heatmaps {pred.shape}")
    count = mask.sum()
    if count == 0:
        warnings.warn("no labeled keypoints in batch; loss is 0", AllInvisibleWarning,
                      stacklevel=2)
        return T.tsum(pred) * 0.0
    diff = pred - Tensor(target)
    per_map = T.mean(diff * diff, axis=(-2, -1))
    # masking by multiplication would let NaN in an unlabeled map leak through
    keep = np.nonzero(mask.reshape(-1))[0]
    per_map = per_map.reshape(-1)[keep]
    return T.tsum(per_map) * (1.0 / float(count))


@dataclass
class DecodedPose:
    """Continuous keypoint coordinates ``[..., N, 2]`` as (x, y) and peak scores ``[..., N]``."""

    coords: np.ndarray
    scores: np.ndarray


def decode(pred, mode: str = "subpixel", input_size=None) -> DecodedPose:
    """Heatmaps ``[..., N, H, W]`` to coordinates.

    ``argmax`` takes the integer peak (first in row-major order on ties).
    ``subpixel`` refines it with one Newton step on the log-heatmap, using
    central-difference gradient and Hessian at the peak. The step is skipped
    at the border, when the Hessian is singular, or when it is not negative
    definite (the peak is then not a local maximum of the quadratic model).
    With ``input_size=(h, w)`` coordinates are scaled to input pixels.
    """
    if mode not in ("argmax", "subpixel"):
        raise ValueError(f"unknown decode mode {mode!r}")
    hm = np.asarray(pred.data if isinstance(pred, Tensor) else pred, dtype=np.float64)
    lead = hm.shape[:-2]
    hh, hw = hm.shape[-2:]
    flat = hm.reshape(-1, hh * hw)
    idx = flat.argmax(axis=1)
    scores = flat[np.arange(flat.shape[0]), idx]
    py, px = np.divmod(idx, hw)
    x = px.astype(np.float64)
    y = py.astype(np.float64)

    if mode == "subpixel":
        interior = (px > 0) & (px < hw - 1) & (py > 0) & (py < hh - 1)
        rows = np.nonzero(interior)[0]
        if rows.size:
            L = np.log(np.maximum(hm.reshape(-1, hh, hw)[rows], LOG_FLOOR))
            cy, cx = py[rows], px[rows]
            r = np.arange(rows.size)

            def at(dy, dx):
                return L[r, cy + dy, cx + dx]

            c = at(0, 0)
            dx = 0.5 * (at(0, 1) - at(0, -1))
            dy = 0.5 * (at(1, 0) - at(-1, 0))
            dxx = at(0, 1) - 2.0 * c + at(0, -1)
            dyy = at(1, 0) - 2.0 * c + at(-1, 0)
            dxy = 0.25 * (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1))
            det = dxx * dyy - dxy * dxy
            scale = np.maximum(np.abs(dxx) * np.abs(dyy), 1e-300)
            ok = (np.abs(det) > 1e-12 * scale) & (det > 0) & (dxx < 0)
            safe = np.where(ok, det, 1.0)
            ox = -(dyy * dx - dxy * dy) / safe
            oy = -(dxx * dy - dxy * dx) / safe
            x[rows] += np.where(ok, ox, 0.0)
            y[rows] += np.where(ok, oy, 0.0)

    x = np.clip(x, 0.0, hw - 1)
    y = np.clip(y, 0.0, hh - 1)
    if input_size is not None:
        ih, iw = input_size
        x = x * (iw / hw)
        y = y * (ih / hh)
    coords = np.stack([x, y], axis=-1).reshape(*lead, 2)
    return DecodedPose(coords, scores.reshape(lead))


# ------------------------------------------------------------------ export


def _normalize_u16(plane: np.ndarray) -> np.ndarray:
    lo, hi = float(plane.min()), float(plane.max())
    if hi <= lo:
        return np.zeros(plane.shape, dtype=np.uint16)
    return np.round((plane - lo) / (hi - lo) * 65535.0).astype(np.uint16)


def write_pgm16(path, plane) -> None:
    """Write one 2D array as a 16-bit binary PGM, min-max normalized to 0..65535."""
    plane = np.asarray(plane, dtype=np.float64)
    h, w = plane.shape
    payload = _normalize_u16(plane).astype(">u2").tobytes()
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(payload)


def export_heatmaps_pgm(heatmaps, out_dir, prefix: str = "heatmap") -> list:
    """One PGM per keypoint map; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, plane in enumerate(np.asarray(heatmaps)):
        path = out_dir / f"{prefix}_{i:02d}.pgm"
        write_pgm16(path, plane)
        paths.append(path)
    return paths


def write_heatmaps_raw(path, heatmaps) -> None:
    """Text header ``"H W N"`` then N little-endian float32 planes of H*W values."""
    maps = np.asarray(heatmaps, dtype="<f4")
    n, h, w = maps.shape
    with open(path, "wb") as fh:
        fh.write(f"{h} {w} {n}\n".encode("ascii"))
        fh.write(maps.tobytes(order="C"))


def read_heatmaps_raw(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        h, w, n = (int(v) for v in header)
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != n * h * w:
        raise ValueError(f"{path}: expected {n * h * w} floats, found {data.size}")
    return data.reshape(n, h, w).copy()
