"""Adam, the step-decay schedule, the training loop and evaluation."""

from __future__ import annotations

import contextlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import tensor as T
from .checkpoint import Checkpoint, check_compatible, load_checkpoint, save_checkpoint
from .config import ModelConfig, desk_toy
from .data import SynthConfig, crop_to_input, generate_synthetic, get_template, load_annotations
from .errors import BatchError, ConfigError, IncompatibleCheckpoint, ShapeMismatch
from .heatmap import decode, make_targets, mse_loss
from .metrics import EvalInstance, average_precision, default_k, pckh
from .model import TokenPose, param_shapes

log = logging.getLogger("tokenpose")

THREADS_ENV = "TOKENPOSE_THREADS"


@contextlib.contextmanager
def thread_limit():
    """Cap BLAS worker threads at ``$TOKENPOSE_THREADS`` when it is set."""
    value = os.environ.get(THREADS_ENV)
    if not value:
        yield
        return
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {value!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1")
    with threadpool_limits(limits=n):
        yield


# ------------------------------------------------------------------ config


@dataclass
class TrainConfig:
    """Everything a training run depends on.

    Data comes from ``train_annotations``/``val_annotations`` when given,
    otherwise from the synthetic generator with seeds ``train_seed`` and
    ``val_seed`` (which must differ). ``crop`` is ``"image"`` to feed whole
    images (they must already have the model input size) or ``"bbox"`` for
    top-down crops around each box. ``checkpoint_every`` and ``eval_every``
    count epochs; 0 disables the periodic action. Training stops at the
    first of ``epochs``, ``max_steps`` and (when evaluating) ``target_pckh``.
    """

    model: ModelConfig = field(default_factory=desk_toy)
    synthetic: SynthConfig = field(default_factory=SynthConfig)
    train_annotations: Optional[str] = None
    val_annotations: Optional[str] = None
    train_count: int = 512
    val_count: int = 64
    train_seed: int = 1
    val_seed: int = 2
    crop: str = "image"
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    base_lr: float = 1e-3
    lr_drop_epochs: list = field(default_factory=lambda: [20, 26])
    lr_drop_factor: float = 0.1
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    sigma: float = 2.0
    flip: bool = False
    attn_dropout: float = 0.0
    mlp_dropout: float = 0.0
    checkpoint_every: int = 0
    eval_every: int = 1
    max_steps: Optional[int] = None
    target_pckh: Optional[float] = None
    out_dir: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if isinstance(self.synthetic, dict):
            self.synthetic = SynthConfig.from_dict(self.synthetic)
        self.lr_drop_epochs = [int(e) for e in self.lr_drop_epochs]
        self.betas = tuple(float(b) for b in self.betas)
        self.validate()

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        drops = self.lr_drop_epochs
        if any(b <= a for a, b in zip(drops, drops[1:])):
            raise ConfigError("lr_drop_epochs must be ascending")
        if drops and (drops[0] < 0 or drops[-1] >= self.epochs):
            raise ConfigError(f"lr_drop_epochs must lie in [0, epochs), got {drops}")
        if self.base_lr <= 0 or not 0 < self.lr_drop_factor <= 1:
            raise ConfigError("base_lr must be positive and lr_drop_factor in (0, 1]")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError("betas must be two values in [0, 1)")
        if self.crop not in ("image", "bbox"):
            raise ConfigError(f"crop must be 'image' or 'bbox', got {self.crop!r}")
        if self.train_annotations is None and self.train_seed == self.val_seed:
            raise ConfigError("train_seed and val_seed must differ (seed-disjoint split)")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["model"] = self.model.to_dict()
        d["synthetic"] = self.synthetic.to_dict()
        d["betas"] = list(self.betas)
        d["lr_drop_epochs"] = list(self.lr_drop_epochs)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Base rate, multiplied by the drop factor once per drop epoch already reached."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    drops = sum(1 for e in cfg.lr_drop_epochs if epoch >= e)
    return cfg.base_lr * cfg.lr_drop_factor ** drops


# ------------------------------------------------------------------ Adam


@dataclass
class AdamState:
    """First and second moments per parameter name, and the update count."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8):
    """One bias-corrected Adam update, in place.

    ``params`` and ``grads`` map names to arrays; a missing or ``None``
    gradient counts as zero. Returns ``(params, state)``.
    """
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        elif g.shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v / c2)
        denom += eps
        p -= (lr / c1) * m / denom
    return params, state


# ------------------------------------------------------------------ data


@dataclass
class PreparedSet:
    """Model inputs, input-space keypoints and loss targets for a list of samples."""

    samples: list
    inputs: np.ndarray
    keypoints: np.ndarray
    transforms: list
    targets: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.samples)


def prepare(samples, model_cfg: ModelConfig, sigma: float = 2.0, crop: str = "image",
            dtype=np.float32) -> PreparedSet:
    in_size = (model_cfg.input_h, model_cfg.input_w)
    hm_size = (model_cfg.heatmap_h, model_cfg.heatmap_w)
    inputs, kps, transforms, targets, weights = [], [], [], [], []
    for s in samples:
        if crop == "bbox":
            img, tf, k = crop_to_input(s, in_size)
        else:
            img = np.asarray(s.load_image())
            if img.shape[1:] != in_size:
                raise ShapeMismatch(
                    f"sample {s.id}: image {img.shape[1:]} differs from input size {in_size}; "
                    "use crop='bbox'"
                )
            tf, k = None, s.keypoints.copy()
        if img.shape[0] != model_cfg.channels:
            raise ShapeMismatch(f"sample {s.id}: {img.shape[0]} channels, model expects "
                                f"{model_cfg.channels}")
        if k.shape[0] != model_cfg.num_keypoints:
            raise ShapeMismatch(f"sample {s.id}: {k.shape[0]} keypoints, model expects "
                                f"{model_cfg.num_keypoints}")
        t, w = make_targets(k, in_size, hm_size, sigma)
        inputs.append(img)
        kps.append(k)
        transforms.append(tf)
        targets.append(t)
        weights.append(w)
    return PreparedSet(list(samples), np.stack(inputs).astype(dtype), np.stack(kps),
                       transforms, np.stack(targets).astype(dtype), np.stack(weights))


def load_datasets(cfg: TrainConfig):
    """(train samples, val samples) from annotation files or the synthetic generator."""
    n = cfg.model.num_keypoints
    if cfg.train_annotations:
        train = load_annotations(cfg.train_annotations, n)
    else:
        train = generate_synthetic(cfg.train_seed, cfg.train_count, cfg=cfg.synthetic)
    if cfg.val_annotations:
        val = load_annotations(cfg.val_annotations, n)
    elif cfg.val_count > 0 and not cfg.train_annotations:
        val = generate_synthetic(cfg.val_seed, cfg.val_count, cfg=cfg.synthetic)
    else:
        val = []
    return train, val


def _flip_batch(x, kps, perm, in_size, hm_size, sigma):
    x = x[..., ::-1]
    kps = kps[:, perm].copy()
    kps[..., 0] = in_size[1] - 1 - kps[..., 0]
    tw = [make_targets(k, in_size, hm_size, sigma) for k in kps]
    return (np.ascontiguousarray(x), np.stack([t for t, _ in tw]).astype(x.dtype),
            np.stack([w for _, w in tw]))


# ------------------------------------------------------------------ eval


@dataclass
class EvalReport:
    coords: np.ndarray
    scores: np.ndarray
    mean_error: float
    pckh: Optional[object]
    ap: Optional[object]

    def summary(self) -> dict:
        out = {"mean_error": self.mean_error}
        if self.pckh is not None:
            out["pckh"] = self.pckh.mean
        if self.ap is not None:
            out.update({"ap": self.ap.ap, "ap50": self.ap.ap50, "ap75": self.ap.ap75,
                        "ar": self.ap.ar})
        return out


def predict_coords(model: TokenPose, data: PreparedSet, mode: str = "subpixel",
                   batch_size: int = 64):
    """Decoded keypoints mapped back to original image pixels, and peak scores."""
    cfg = model.cfg
    hm = model.predict(data.inputs, batch_size)
    pose = decode(hm, mode, (cfg.input_h, cfg.input_w))
    coords = pose.coords.copy()
    for i, tf in enumerate(data.transforms):
        if tf is not None:
            coords[i] = tf.inverse(coords[i])
    return coords, pose.scores


def evaluate(model: TokenPose, data: PreparedSet, mode: str = "subpixel",
             batch_size: int = 64, k=None) -> EvalReport:
    """Mean pixel error over labeled joints, PCKh@0.5 when head sizes exist, and OKS AP."""
    with thread_limit():
        coords, scores = predict_coords(model, data, mode, batch_size)
    gts = np.stack([s.keypoints for s in data.samples])
    labeled = gts[..., 2] > 0
    err = np.hypot(*(coords - gts[..., :2]).transpose(2, 0, 1))
    mean_error = float(err[labeled].mean()) if labeled.any() else float("nan")
    k = default_k(gts.shape[1]) if k is None else k
    instances = [
        EvalInstance(gt=s.keypoints, pred=c, scale=s.scale, k=k, head_size=s.head_size,
                     pred_scores=sc, image_id=s.id)
        for s, c, sc in zip(data.samples, coords, scores)
    ]
    has_head = all(s.head_size is not None and s.head_size > 0 for s in data.samples)
    pk = pckh(instances) if has_head else None
    ap = average_precision(instances) if labeled.any() else None
    return EvalReport(coords, scores, mean_error, pk, ap)


# ------------------------------------------------------------------ loop


@dataclass
class TrainResult:
    model: TokenPose
    checkpoint: Checkpoint
    log: list
    stopped_early: bool = False


def make_checkpoint(model: TokenPose, opt: AdamState, cfg: TrainConfig) -> Checkpoint:
    return Checkpoint(
        params={k: v.data.copy() for k, v in model.params.items()},
        adam_m={k: v.copy() for k, v in opt.m.items()},
        adam_v={k: v.copy() for k, v in opt.v.items()},
        step=opt.t, config=cfg.to_dict(),
    )


def restore(ckpt: Checkpoint, cfg: TrainConfig) -> tuple:
    """Model and optimizer state from a checkpoint taken under ``cfg``."""
    check_compatible(ckpt, param_shapes(cfg.model), "resume")
    model = TokenPose(cfg.model, seed=cfg.seed, attn_dropout=cfg.attn_dropout,
                      mlp_dropout=cfg.mlp_dropout)
    model.load_state_dict(ckpt.params)
    opt = AdamState(m={k: np.array(v, dtype=np.float32) for k, v in ckpt.adam_m.items()},
                    v={k: np.array(v, dtype=np.float32) for k, v in ckpt.adam_v.items()},
                    t=ckpt.step)
    return model, opt


def train(cfg: TrainConfig, train_samples=None, val_samples=None,
          resume: Optional[object] = None,
          on_step: Optional[Callable[[int, float], None]] = None) -> TrainResult:
    """Run the training loop.

    Data order, flips and dropout masks are pure functions of ``(seed,
    epoch)`` and ``(seed, step)``, so a run resumed from a checkpoint takes
    exactly the same steps as an uninterrupted one. ``resume`` is a
    :class:`Checkpoint` or a path to one.
    """
    if train_samples is None:
        train_samples, loaded_val = load_datasets(cfg)
        if val_samples is None:
            val_samples = loaded_val
    train_set = prepare(train_samples, cfg.model, cfg.sigma, cfg.crop)
    val_set = prepare(val_samples, cfg.model, cfg.sigma, cfg.crop) if val_samples else None

    if resume is not None:
        ckpt = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        model, opt = restore(ckpt, cfg)
        log.info("resumed at step %d", opt.t)
    else:
        model = TokenPose(cfg.model, seed=cfg.seed, attn_dropout=cfg.attn_dropout,
                          mlp_dropout=cfg.mlp_dropout)
        opt = AdamState()

    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(cfg.to_json())
    log_path = out_dir / "log.jsonl" if out_dir else None

    n = len(train_set)
    per_epoch = math.ceil(n / cfg.batch_size)
    total = cfg.epochs * per_epoch
    if cfg.max_steps is not None:
        total = min(total, cfg.max_steps)
    in_size = (cfg.model.input_h, cfg.model.input_w)
    hm_size = (cfg.model.heatmap_h, cfg.model.heatmap_w)
    perm = None
    if cfg.flip:
        template = get_template(cfg.synthetic.template)
        if template.num_joints != cfg.model.num_keypoints:
            raise ConfigError("flip needs a template with the model's keypoint count")
        perm = template.flip_permutation()

    records, stopped = [], False
    step = opt.t
    epoch_losses = []
    tic = time.perf_counter()
    with thread_limit():
        while step < total and not stopped:
            epoch, pos = divmod(step, per_epoch)
            order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
            idx = order[pos * cfg.batch_size:(pos + 1) * cfg.batch_size]
            lr = lr_at(epoch, cfg)
            x, t, w = train_set.inputs[idx], train_set.targets[idx], train_set.weights[idx]
            if perm is not None:
                flips = np.random.default_rng([cfg.seed, epoch, 1]).random(n)[idx] < 0.5
                if flips.any():
                    fx, ft, fw = _flip_batch(x[flips], train_set.keypoints[idx][flips], perm,
                                             in_size, hm_size, cfg.sigma)
                    x, t, w = x.copy(), t.copy(), w.copy()
                    x[flips], t[flips], w[flips] = fx, ft, fw
            rng = np.random.default_rng([cfg.seed, 2, step])
            try:
                model.zero_grad()
                hm, _ = model(x, training=True, rng=rng)
                loss = mse_loss(hm, t, w)
                T.backward(loss)
                grads = {k: p.grad for k, p in model.params.items()}
                arrays = {k: p.data for k, p in model.params.items()}
                adam_step(arrays, grads, opt, lr, cfg.betas, cfg.eps)
            except Exception as exc:
                raise BatchError(step, [train_set.samples[i].id for i in idx], exc) from exc
            step = opt.t
            loss_value = float(loss.data)
            if not math.isfinite(loss_value):
                raise BatchError(step - 1, [train_set.samples[i].id for i in idx],
                                 FloatingPointError(f"non-finite loss {loss_value}"))
            epoch_losses.append(loss_value)
            if on_step is not None:
                on_step(step, loss_value)

            epoch_done = step % per_epoch == 0
            if epoch_done or step >= total:
                rec = {"epoch": epoch, "step": step, "lr": lr,
                       "train_loss": float(np.mean(epoch_losses)),
                       "time": round(time.perf_counter() - tic, 3)}
                epoch_losses = []
                last = step >= total
                if val_set is not None and cfg.eval_every and (
                    (epoch + 1) % cfg.eval_every == 0 or last
                ):
                    report = evaluate(model, val_set)
                    rec.update({"val_" + k: v for k, v in report.summary().items()})
                    if (cfg.target_pckh is not None and report.pckh is not None
                            and report.pckh.mean >= cfg.target_pckh):
                        stopped = True
                records.append(rec)
                log.info(json.dumps(rec))
                if log_path is not None:
                    with open(log_path, "a") as fh:
                        fh.write(json.dumps(rec) + "\n")
                if out_dir is not None and cfg.checkpoint_every and epoch_done and (
                    (epoch + 1) % cfg.checkpoint_every == 0
                ):
                    save_checkpoint(out_dir / f"epoch_{epoch + 1:04d}.tkpz",
                                    make_checkpoint(model, opt, cfg))

    ckpt = make_checkpoint(model, opt, cfg)
    if out_dir is not None:
        save_checkpoint(out_dir / "final.tkpz", ckpt)
    return TrainResult(model, ckpt, records, stopped)


def model_from_checkpoint(ckpt, model_cfg: Optional[ModelConfig] = None) -> TokenPose:
    """Rebuild the network stored in a checkpoint (config taken from its snapshot)."""
    ckpt = ckpt if isinstance(ckpt, Checkpoint) else load_checkpoint(ckpt)
    if model_cfg is None:
        snap = ckpt.config.get("model", ckpt.config)
        try:
            model_cfg = ModelConfig.from_dict(snap)
        except (ConfigError, TypeError) as exc:
            raise IncompatibleCheckpoint(f"checkpoint config unusable: {exc}") from None
    check_compatible(ckpt, param_shapes(model_cfg))
    model = TokenPose(model_cfg, params={})
    model.load_state_dict(ckpt.params)
    return model
