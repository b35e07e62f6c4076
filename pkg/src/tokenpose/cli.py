"""Command-line entry point: gen-data, train, eval, infer, export-attention, params."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import load_checkpoint
from .config import ModelConfig, desk_toy, tokenpose_s_v1, tokenpose_t
from .data import (
    PoseSample,
    generate_synthetic,
    get_template,
    load_annotations,
    prediction_records,
    read_pnm,
    save_annotations,
    save_predictions,
)
from .errors import ConfigError, TokenPoseError
from .heatmap import decode, export_heatmaps_pgm, write_heatmaps_raw
from .metrics import MPII_GROUPS, format_table
from .model import count_params, param_shapes
from .train import TrainConfig, evaluate, load_datasets, model_from_checkpoint, prepare, train
from .visualize import export_attention

log = logging.getLogger("tokenpose")

PRESETS = {"tokenpose-t": tokenpose_t, "tokenpose-s-v1": tokenpose_s_v1, "desk-toy": desk_toy}


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``key=value`` pairs; dotted keys reach into nested sections."""
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {part} is not a section")
        node[parts[-1]] = parse_value(value)
    return data


def load_config(path: Optional[str], overrides=None) -> TrainConfig:
    data = json.loads(Path(path).read_text()) if path else TrainConfig().to_dict()
    return TrainConfig.from_dict(apply_overrides(data, overrides))


def emit(result, out: Optional[str]) -> None:
    text = json.dumps(result, indent=2)
    if out:
        Path(out).write_text(text + "\n")
        log.info("wrote %s", out)
    else:
        sys.stdout.write(text + "\n")


def _keypoint_names(cfg: TrainConfig) -> list:
    template = get_template(cfg.synthetic.template)
    if template.num_joints == cfg.model.num_keypoints:
        return list(template.joints)
    return [f"kp{i}" for i in range(cfg.model.num_keypoints)]


def _eval_samples(args, cfg: TrainConfig) -> list:
    if args.annotations:
        return load_annotations(args.annotations, cfg.model.num_keypoints)
    return load_datasets(cfg)[1]


def _checkpoint_config(path: str, args) -> tuple:
    ckpt = load_checkpoint(path)
    snapshot = ckpt.config if "model" in ckpt.config else {"model": ckpt.config}
    base = dict(snapshot)
    if args.config:
        base.update(json.loads(Path(args.config).read_text()))
    cfg = TrainConfig.from_dict(apply_overrides(base, args.set))
    return ckpt, cfg


# ------------------------------------------------------------------ commands


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, args.set)
    out = Path(args.out_dir)
    template = get_template(cfg.synthetic.template)
    result = {}
    for split, seed, count in (("train", cfg.train_seed, cfg.train_count),
                               ("val", cfg.val_seed, cfg.val_count)):
        if count <= 0:
            continue
        samples = generate_synthetic(seed, count, template, cfg.synthetic)
        path = out / split / "annotations.json"
        save_annotations(samples, path, template=template)
        result[split] = {"annotations": str(path), "count": count, "seed": seed}
        log.info("%s: %d samples -> %s", split, count, path)
    emit(result, args.out)
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.out_dir:
        cfg.out_dir = args.out_dir
    res = train(cfg, resume=args.resume)
    summary = {"steps": res.checkpoint.step, "epochs_logged": len(res.log),
               "final": res.log[-1] if res.log else None, "stopped_early": res.stopped_early}
    if cfg.out_dir:
        summary["checkpoint"] = str(Path(cfg.out_dir) / "final.tkpz")
    emit(summary, args.out)
    return 0


def cmd_eval(args) -> int:
    ckpt, cfg = _checkpoint_config(args.checkpoint, args)
    model = model_from_checkpoint(ckpt, cfg.model)
    samples = _eval_samples(args, cfg)
    data = prepare(samples, cfg.model, cfg.sigma, cfg.crop)
    report = evaluate(model, data, args.mode)
    names = _keypoint_names(cfg)
    result = {"samples": len(samples), "mode": args.mode, "mean_error": report.mean_error}
    if report.ap is not None:
        result["ap"] = report.ap.to_dict()
    if report.pckh is not None:
        result["pckh"] = report.pckh.to_dict(names)
        grouped = report.pckh.grouped(names)
        covered = {m for members in MPII_GROUPS.values() for m in members}
        if set(names) <= covered:
            result["pckh"]["groups"] = grouped
            log.info("PCKh@0.5\n%s", format_table(list(grouped), [list(grouped.values())]))
        else:
            log.info("PCKh@0.5\n%s", format_table(
                names + ["Mean"], [list(report.pckh.per_joint) + [report.pckh.mean]]))
    if report.ap is not None:
        log.info("OKS AP\n%s", format_table(
            ["AP", "AP50", "AP75", "AR"],
            [[100 * report.ap.ap, 100 * report.ap.ap50, 100 * report.ap.ap75, 100 * report.ap.ar]]))
    emit(result, args.out)
    return 0


def cmd_infer(args) -> int:
    ckpt, cfg = _checkpoint_config(args.checkpoint, args)
    model = model_from_checkpoint(ckpt, cfg.model)
    if args.image:
        samples = []
        for i, p in enumerate(args.image):
            img = read_pnm(p)
            h, w = img.shape[1:]
            samples.append(PoseSample(id=Path(p).stem, keypoints=np.zeros((cfg.model.num_keypoints, 3)),
                                      bbox=(0, 0, w, h), image=img, width=w, height=h))
    else:
        samples = _eval_samples(args, cfg)
    data = prepare(samples, cfg.model, cfg.sigma, cfg.crop)
    hm = model.predict(data.inputs)
    pose = decode(hm, args.mode, (cfg.model.input_h, cfg.model.input_w))
    coords = pose.coords.copy()
    for i, tf in enumerate(data.transforms):
        if tf is not None:
            coords[i] = tf.inverse(coords[i])
    records = prediction_records(samples, coords, pose.scores)
    if args.heatmaps:
        root = Path(args.heatmaps)
        for s, maps in zip(samples, hm):
            root.mkdir(parents=True, exist_ok=True)
            write_heatmaps_raw(root / f"{s.id}.raw", maps)
            export_heatmaps_pgm(maps, root / s.id)
        log.info("heatmaps written under %s", root)
    if args.out:
        save_predictions(records, args.out)
        log.info("wrote %d predictions to %s", len(records), args.out)
    else:
        sys.stdout.write(json.dumps(records, indent=1) + "\n")
    return 0


def cmd_export_attention(args) -> int:
    ckpt, cfg = _checkpoint_config(args.checkpoint, args)
    model = model_from_checkpoint(ckpt, cfg.model)
    if args.image:
        sample = read_pnm(args.image)
    else:
        samples = _eval_samples(args, cfg)
        if not 0 <= args.index < len(samples):
            raise ConfigError(f"--index {args.index} outside 0..{len(samples) - 1}")
        sample = samples[args.index]
    names = _keypoint_names(cfg)
    keypoints = None
    if args.keypoints:
        lookup = {n: i for i, n in enumerate(names)}
        keypoints = [lookup[k] if k in lookup else int(k) for k in args.keypoints.split(",")]
    index = export_attention(model, sample, args.out_dir, keypoints=keypoints, names=names,
                             top_k=args.top_k, crop=cfg.crop)
    emit({"out_dir": str(args.out_dir), **index}, args.out)
    return 0


def cmd_params(args) -> int:
    if args.preset:
        model_cfg = PRESETS[args.preset]()
    elif args.config:
        data = json.loads(Path(args.config).read_text())
        data = apply_overrides(data, args.set)
        model_cfg = ModelConfig.from_dict(data.get("model", data))
    else:
        model_cfg = TrainConfig.from_dict(apply_overrides(TrainConfig().to_dict(), args.set)).model
    if args.preset and args.set:
        data = apply_overrides(model_cfg.to_dict(), args.set)
        model_cfg = ModelConfig.from_dict(data)
    groups = {}
    for name, shape in param_shapes(model_cfg).items():
        key = name.split(".")[0] if not name.startswith("blocks.") else "blocks"
        groups[key] = groups.get(key, 0) + int(np.prod(shape))
    total = count_params(model_cfg)
    log.info("%s parameters (%.2fM)", f"{total:,}", total / 1e6)
    emit({"total": total, "by_group": groups, "model": model_cfg.to_dict()}, args.out)
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tokenpose", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="JSON training config")
            p.add_argument("--set", action="append", metavar="KEY=VALUE",
                           help="override a config field (dotted keys for nested fields)")
        p.add_argument("--out", help="write the JSON result here instead of stdout")

    p = sub.add_parser("gen-data", help="render a synthetic train/val split to disk")
    common(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--out-dir", help="checkpoint and log directory (overrides out_dir)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    for name, func, text in (("eval", cmd_eval, "evaluate a checkpoint"),
                             ("infer", cmd_infer, "predict keypoints")):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--annotations", help="COCO-style file (default: synthetic val split)")
        p.add_argument("--mode", choices=("subpixel", "argmax"), default="subpixel")
        if name == "infer":
            p.add_argument("--image", nargs="+", help="PPM/PGM images at model input size")
            p.add_argument("--heatmaps", help="directory for raw and PGM heatmaps")
        p.set_defaults(func=func)

    p = sub.add_parser("export-attention", help="write attention maps and constraint tables")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--annotations")
    p.add_argument("--index", type=int, default=0, help="sample index in the annotation set")
    p.add_argument("--image", help="PPM/PGM image at model input size")
    p.add_argument("--keypoints", help="comma-separated names or indices (default: all)")
    p.add_argument("--top-k", type=int, default=2)
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("params", help="count trainable parameters")
    common(p)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (TokenPoseError, FileNotFoundError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
