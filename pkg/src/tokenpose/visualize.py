"""Attention export: spatial keypoint-to-patch maps, keypoint-to-keypoint tables and priors."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint
from .data import PoseSample, crop_to_input
from .encoder import keypoint_prior_matrix
from .errors import IncompatibleCheckpoint, ShapeMismatch
from .heatmap import write_pgm16
from .model import TokenPose

KP_NOTE = (
    "Rows are head-averaged attention from each keypoint token to the other keypoint "
    "tokens. Visual-token columns and the self column are dropped and each row is "
    "renormalized to sum to 1; 'row_mass' is the share of the raw row that the kept "
    "columns held and 'self' the raw self-attention."
)


def keypoint_visual_maps(weights: np.ndarray, n_kp: int, grid) -> np.ndarray:
    """Head-averaged keypoint-row attention over visual tokens as ``[N, gh, gw]`` grids."""
    avg = weights.mean(axis=0)
    return avg[:n_kp, n_kp:].reshape(n_kp, *grid)


def keypoint_keypoint(weights: np.ndarray, n_kp: int):
    """Renormalized off-diagonal keypoint block, raw kept mass per row, raw diagonal."""
    avg = weights.mean(axis=0)[:n_kp, :n_kp].astype(np.float64)
    diag = np.diag(avg).copy()
    block = avg.copy()
    np.fill_diagonal(block, 0.0)
    mass = block.sum(axis=1)
    safe = np.where(mass > 0, mass, 1.0)
    return block / safe[:, None], mass, diag


def top_constraints(matrix: np.ndarray, raw: np.ndarray, names: Sequence[str], k: int = 2):
    """The ``k`` largest entries of each row (ties broken by lower index)."""
    table = {}
    for i, name in enumerate(names):
        order = np.argsort(-matrix[i], kind="stable")
        order = [j for j in order if j != i][:k]
        table[name] = [{"keypoint": names[j], "index": int(j),
                        "score": float(matrix[i, j]), "raw_score": float(raw[i, j])}
                       for j in order]
    return table


def _upsample(grid_map: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    gh, gw = grid_map.shape
    return np.repeat(np.repeat(grid_map, out_h // gh, axis=0), out_w // gw, axis=1)


def _load(ckpt) -> TokenPose:
    from .train import model_from_checkpoint

    if not isinstance(ckpt, (Checkpoint, TokenPose)):
        ckpt = load_checkpoint(ckpt)
    return ckpt if isinstance(ckpt, TokenPose) else model_from_checkpoint(ckpt)


def export_attention(ckpt, sample, out_dir, keypoints: Optional[Sequence[int]] = None,
                     names: Optional[Sequence[str]] = None, top_k: int = 2,
                     layers: Optional[Sequence[int]] = None, crop: str = "image") -> dict:
    """Write attention visualizations for one sample.

    ``ckpt`` is a checkpoint, a path to one, or a model. ``sample`` is a
    :class:`PoseSample` or an image ``[c, H, W]`` already at input size.
    For every selected layer and keypoint this writes the patch-grid map
    (``*_grid.pgm``) and its nearest-neighbour upsampling to input size;
    per layer, the keypoint-to-keypoint matrix as PGM and JSON. It also
    writes the final-layer top-k constraint table and the prior matrix of
    the input keypoint tokens. Returns an index of the written files.
    """
    model = _load(ckpt)
    cfg = model.cfg
    if isinstance(sample, PoseSample):
        if crop == "bbox":
            image = crop_to_input(sample, (cfg.input_h, cfg.input_w))[0]
        else:
            image = np.asarray(sample.load_image())
    else:
        image = np.asarray(sample)
    if image.shape != (cfg.channels, cfg.input_h, cfg.input_w):
        raise IncompatibleCheckpoint(
            f"sample of shape {image.shape} does not fit a model expecting "
            f"{(cfg.channels, cfg.input_h, cfg.input_w)}"
        )
    n = cfg.num_keypoints
    names = list(names) if names is not None else [f"kp{i}" for i in range(n)]
    if len(names) != n:
        raise ShapeMismatch(f"{len(names)} names for {n} keypoints")
    keypoints = list(range(n)) if keypoints is None else [int(k) for k in keypoints]
    layers = list(range(1, cfg.num_layers + 1)) if layers is None else [int(l) for l in layers]

    from .tensor import no_grad

    with no_grad():
        _, state = model.forward(image[None], record_attention=True)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = {"spatial": [], "keypoint_keypoint": [], "constraints": None, "prior": None}
    last = None
    for layer in layers:
        weights = state.attention(layer)[0]
        maps = keypoint_visual_maps(weights, n, cfg.grid)
        for j in keypoints:
            grid_path = out / f"layer{layer:02d}_{names[j]}_grid.pgm"
            full_path = out / f"layer{layer:02d}_{names[j]}.pgm"
            write_pgm16(grid_path, maps[j])
            write_pgm16(full_path, _upsample(maps[j], cfg.input_h, cfg.input_w))
            index["spatial"].append({"layer": layer, "keypoint": names[j],
                                     "grid": grid_path.name, "upsampled": full_path.name})
        kk, mass, diag = keypoint_keypoint(weights, n)
        stem = f"layer{layer:02d}_keypoint_keypoint"
        write_pgm16(out / f"{stem}.pgm", kk)
        (out / f"{stem}.json").write_text(json.dumps({
            "note": KP_NOTE, "layer": layer, "keypoints": names,
            "matrix": kk.tolist(), "row_mass": mass.tolist(), "self": diag.tolist(),
        }, indent=1))
        index["keypoint_keypoint"].append(f"{stem}.json")
        if layer == max(layers):
            last = (kk, weights.mean(axis=0)[:n, :n], layer)

    if last is not None:
        kk, raw, layer = last
        table = top_constraints(kk, raw, names, top_k)
        (out / "constraints.json").write_text(json.dumps(
            {"layer": layer, "top_k": top_k,
             "note": "score: renormalized keypoint-keypoint attention; raw_score: "
                     "head-averaged attention before renormalization",
             "constraints": {names[j]: table[names[j]] for j in keypoints}}, indent=1))
        index["constraints"] = "constraints.json"

    prior = keypoint_prior_matrix(model.keypoint_table)
    write_pgm16(out / "keypoint_prior.pgm", prior)
    (out / "keypoint_prior.json").write_text(json.dumps({
        "note": "softmax over each row of the input keypoint tokens' inner products / sqrt(d)",
        "keypoints": names, "matrix": prior.tolist()}, indent=1))
    index["prior"] = "keypoint_prior.json"
    (out / "index.json").write_text(json.dumps(index, indent=1))
    return index
