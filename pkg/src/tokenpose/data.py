"""Synthetic stick-figure data, PPM/PGM images, COCO-style annotations and crops.

Coordinates follow the pixel-center convention: pixel ``(row, col)`` sits at
``(x, y) = (col, row)``.
"""

from __future__ import annotations

import colorsys
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import DegenerateBox, SchemaError, TemplateInvalid

VISIBLE = 2
UNLABELED = 0


# ---------------------------------------------------------------- templates


@dataclass
class SkeletonTemplate:
    """A tree of named joints with a symmetric rest pose and draw styles.

    ``edges`` holds ``(parent, child)`` index pairs; ``rest_lengths`` and
    ``rest_angles`` (degrees, image axes with y pointing down) give each
    child's offset from its parent. The first joint that never appears as
    a child is the root, placed at the origin. ``colors`` are the per-joint
    disc intensities (RGB in [0, 1]); ``head`` names the two joints whose
    distance is the head size.
    """

    name: str
    joints: list
    edges: list
    rest_lengths: list
    rest_angles: list
    symmetry: list
    radii: list
    colors: list
    head: tuple
    limb_width: float = 1.0
    limb_intensity: float = 0.45

    def __post_init__(self):
        self.validate()

    @property
    def num_joints(self) -> int:
        return len(self.joints)

    @property
    def root(self) -> int:
        children = {c for _, c in self.edges}
        return next(i for i in range(self.num_joints) if i not in children)

    def validate(self) -> None:
        n = self.num_joints
        if n < 1:
            raise TemplateInvalid("template has no joints")
        if len(set(self.joints)) != n:
            raise TemplateInvalid("joint names must be unique")
        if len(self.edges) != n - 1:
            raise TemplateInvalid(f"a tree over {n} joints needs {n - 1} edges, got {len(self.edges)}")
        if not (len(self.rest_lengths) == len(self.rest_angles) == len(self.edges)):
            raise TemplateInvalid("rest_lengths and rest_angles must match edges")
        if len(self.radii) != n or len(self.colors) != n:
            raise TemplateInvalid("radii and colors need one entry per joint")
        parents = {}
        for p, c in self.edges:
            if not (0 <= p < n and 0 <= c < n) or p == c:
                raise TemplateInvalid(f"bad edge ({p}, {c})")
            if c in parents:
                raise TemplateInvalid(f"joint {c} has two parents")
            parents[c] = p
        roots = [i for i in range(n) if i not in parents]
        if len(roots) != 1:
            raise TemplateInvalid(f"edges must form a single tree, found roots {roots}")
        for start in range(n):
            seen, node = set(), start
            while node in parents:
                if node in seen:
                    raise TemplateInvalid("edges contain a cycle")
                seen.add(node)
                node = parents[node]
        used = [j for pair in self.symmetry for j in pair]
        if len(used) != len(set(used)) or any(not 0 <= j < n for j in used):
            raise TemplateInvalid("symmetry pairs must be disjoint joint indices")
        if len({tuple(np.round(c, 6)) for c in self.colors}) != n:
            raise TemplateInvalid("joint colors must be distinct")
        if any(r <= 0 for r in self.radii) or any(length <= 0 for length in self.rest_lengths):
            raise TemplateInvalid("radii and rest lengths must be positive")

    def ordered_edges(self) -> list:
        """Edge indices ordered so that parents are placed before children."""
        placed, order = {self.root}, []
        pending = list(range(len(self.edges)))
        while pending:
            for e in list(pending):
                p, c = self.edges[e]
                if p in placed:
                    placed.add(c)
                    order.append(e)
                    pending.remove(e)
        return order

    def pose(self, jitter_deg=None) -> np.ndarray:
        """Joint positions ``[N, 2]`` with optional per-edge angle offsets.

        Each edge's offset is added to its own rest angle and carried down
        to all descendants, like a kinematic chain.
        """
        n = self.num_joints
        pos = np.zeros((n, 2))
        turn = np.zeros(n)
        jitter = np.zeros(len(self.edges)) if jitter_deg is None else np.asarray(jitter_deg)
        for e in self.ordered_edges():
            p, c = self.edges[e]
            turn[c] = turn[p] + jitter[e]
            a = math.radians(self.rest_angles[e] + turn[c])
            pos[c] = pos[p] + self.rest_lengths[e] * np.array([math.cos(a), math.sin(a)])
        return pos

    def rest_pose(self) -> np.ndarray:
        return self.pose()

    def flip_permutation(self) -> np.ndarray:
        perm = np.arange(self.num_joints)
        for a, b in self.symmetry:
            perm[a], perm[b] = b, a
        return perm


def _palette(n: int) -> list:
    # evenly spaced hues, alternating brightness so neighbours differ in value too
    return [colorsys.hsv_to_rgb(i / n, 0.8, 1.0 if i % 2 == 0 else 0.75) for i in range(n)]


def stick8() -> SkeletonTemplate:
    """Eight-joint stick figure rooted at the neck; head size is head-to-neck."""
    joints = ["head", "neck", "l_elbow", "r_elbow", "l_wrist", "r_wrist", "l_ankle", "r_ankle"]
    edges = [(1, 0), (1, 2), (1, 3), (2, 4), (3, 5), (1, 6), (1, 7)]
    lengths = [10.0, 11.0, 11.0, 10.0, 10.0, 30.0, 30.0]
    angles = [-90.0, 30.0, 150.0, 60.0, 120.0, 75.0, 105.0]
    return SkeletonTemplate(
        name="stick8", joints=joints, edges=edges, rest_lengths=lengths,
        rest_angles=angles, symmetry=[(2, 3), (4, 5), (6, 7)],
        radii=[2.0] * 8, colors=_palette(8), head=(0, 1),
    )


COCO_JOINTS = [
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
]


def coco17() -> SkeletonTemplate:
    """The 17 COCO keypoints in COCO order, rooted at the nose."""
    edges = [(0, 1), (0, 2), (1, 3), (2, 4), (0, 5), (0, 6), (5, 7), (6, 8),
             (7, 9), (8, 10), (5, 11), (6, 12), (11, 13), (12, 14), (13, 15), (14, 16)]
    lengths = [3.0, 3.0, 3.5, 3.5, 12.0, 12.0, 11.0, 11.0, 10.0, 10.0,
               20.0, 20.0, 15.0, 15.0, 15.0, 15.0]
    angles = [-45.0, -135.0, -20.0, -160.0, 55.0, 125.0, 80.0, 100.0,
              85.0, 95.0, 88.0, 92.0, 90.0, 90.0, 90.0, 90.0]
    sym = [(1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16)]
    return SkeletonTemplate(
        name="coco17", joints=list(COCO_JOINTS), edges=edges, rest_lengths=lengths,
        rest_angles=angles, symmetry=sym, radii=[1.5] * 17, colors=_palette(17),
        head=(3, 4),
    )


TEMPLATES = {"stick8": stick8, "coco17": coco17}


def get_template(name: str) -> SkeletonTemplate:
    try:
        return TEMPLATES[name]()
    except KeyError:
        raise TemplateInvalid(f"unknown template {name!r}; choose from {sorted(TEMPLATES)}") from None


# ------------------------------------------------------------------ samples


@dataclass
class PoseSample:
    """One annotated person crop; ``keypoints`` is ``[N, 3]`` of (x, y, v) in pixels."""

    id: str
    keypoints: np.ndarray
    bbox: tuple
    image: Optional[np.ndarray] = None
    scale: Optional[float] = None
    head_size: Optional[float] = None
    image_path: Optional[str] = None
    width: Optional[int] = None
    height: Optional[int] = None

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 3)
        self.bbox = tuple(float(v) for v in self.bbox)
        if self.scale is None:
            self.scale = math.sqrt(max(self.bbox[2] * self.bbox[3], 1e-12))

    def load_image(self) -> np.ndarray:
        if self.image is None:
            if self.image_path is None:
                raise FileNotFoundError(f"sample {self.id} has no image")
            self.image = read_pnm(self.image_path)
        return self.image

    @property
    def visible(self) -> np.ndarray:
        return self.keypoints[:, 2] > 0


@dataclass
class SynthConfig:
    """Rendering and sampling knobs for :func:`generate_synthetic`."""

    height: int = 64
    width: int = 64
    channels: int = 3
    template: str = "stick8"
    rotation_deg: float = 30.0
    scale_range: tuple = (0.7, 1.3)
    joint_jitter_deg: float = 20.0
    occlusion_rate: float = 0.0
    max_occluded: int = 3
    noise: float = 0.03
    margin: float = 3.0

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["scale_range"] = list(self.scale_range)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        data = dict(data)
        if "scale_range" in data:
            data["scale_range"] = tuple(data["scale_range"])
        return cls(**data)


def _segment_coverage(xx, yy, a, b, half_width):
    d = b - a
    length2 = float(d @ d)
    if length2 == 0.0:
        dist = np.hypot(xx - a[0], yy - a[1])
    else:
        t = np.clip(((xx - a[0]) * d[0] + (yy - a[1]) * d[1]) / length2, 0.0, 1.0)
        dist = np.hypot(xx - (a[0] + t * d[0]), yy - (a[1] + t * d[1]))
    return np.clip(half_width + 0.5 - dist, 0.0, 1.0)


def _disc_coverage(xx, yy, center, radius):
    dist = np.hypot(xx - center[0], yy - center[1])
    return np.clip(radius + 0.5 - dist, 0.0, 1.0)


def render(template: SkeletonTemplate, joints: np.ndarray, height: int, width: int,
           channels: int = 3, radius_scale: float = 1.0, background=None) -> np.ndarray:
    """Draw limbs as anti-aliased segments and joints as discs; returns ``[c,h,w]``."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    img = np.zeros((3, height, width)) if background is None else np.array(background, dtype=np.float64)
    if img.shape[0] != 3:
        img = np.repeat(img[:1], 3, axis=0)
    for p, c in template.edges:
        cov = _segment_coverage(xx, yy, joints[p], joints[c], template.limb_width * radius_scale)
        img = img * (1.0 - cov) + cov * template.limb_intensity
    for j in range(template.num_joints):
        cov = _disc_coverage(xx, yy, joints[j], template.radii[j] * radius_scale)
        color = np.asarray(template.colors[j])[:, None, None]
        img = img * (1.0 - cov) + cov * color
    if channels == 1:
        img = img.mean(axis=0, keepdims=True)
    elif channels != 3:
        raise ValueError("channels must be 1 or 3")
    return np.clip(img, 0.0, 1.0)


def _bbox_of(points: np.ndarray, pad: float, width: int, height: int) -> tuple:
    x0 = max(points[:, 0].min() - pad, 0.0)
    y0 = max(points[:, 1].min() - pad, 0.0)
    x1 = min(points[:, 0].max() + pad, width - 1.0)
    y1 = min(points[:, 1].max() + pad, height - 1.0)
    return (x0, y0, x1 - x0, y1 - y0)


def generate_synthetic(seed: int, count: int, template: Optional[SkeletonTemplate] = None,
                       cfg: Optional[SynthConfig] = None) -> list:
    """Render ``count`` randomly posed figures; a pure function of its arguments.

    Every sample draws, in order: per-edge angle jitter, global rotation,
    scale, an in-frame translation, background noise and, with probability
    ``cfg.occlusion_rate``, one occluding rectangle covering at most
    ``cfg.max_occluded`` joints (those joints get ``v = 0``).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    cfg = cfg or SynthConfig()
    template = template or get_template(cfg.template)
    template.validate()
    rng = np.random.default_rng(seed)
    samples = []
    yy, xx = np.mgrid[0:cfg.height, 0:cfg.width].astype(np.float64)
    for index in range(count):
        jitter = rng.uniform(-cfg.joint_jitter_deg, cfg.joint_jitter_deg, len(template.edges))
        local = template.pose(jitter)
        theta = math.radians(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
        scale = rng.uniform(*cfg.scale_range)
        rot = np.array([[math.cos(theta), -math.sin(theta)],
                        [math.sin(theta), math.cos(theta)]])
        pts = scale * local @ rot.T
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        pad = cfg.margin + max(template.radii) * scale
        span_x = (cfg.width - 1 - 2 * pad) - (hi[0] - lo[0])
        span_y = (cfg.height - 1 - 2 * pad) - (hi[1] - lo[1])
        if span_x < 0 or span_y < 0:
            raise TemplateInvalid(
                f"figure does not fit a {cfg.height}x{cfg.width} image at scale {scale:.2f}"
            )
        offset = np.array([pad + rng.uniform(0, span_x) - lo[0],
                           pad + rng.uniform(0, span_y) - lo[1]])
        joints = pts + offset

        background = np.clip(rng.normal(0.08, cfg.noise, (3, cfg.height, cfg.width)), 0, 1)
        image = render(template, joints, cfg.height, cfg.width, cfg.channels,
                       radius_scale=1.0, background=background)
        vis = np.full(template.num_joints, float(VISIBLE))

        if cfg.occlusion_rate > 0 and rng.random() < cfg.occlusion_rate:
            for _ in range(20):
                w = rng.uniform(6, cfg.width / 3)
                h = rng.uniform(6, cfg.height / 3)
                x0 = rng.uniform(0, cfg.width - w)
                y0 = rng.uniform(0, cfg.height - h)
                r = max(template.radii)
                covered = ((joints[:, 0] >= x0 - r) & (joints[:, 0] <= x0 + w + r)
                           & (joints[:, 1] >= y0 - r) & (joints[:, 1] <= y0 + h + r))
                if 1 <= covered.sum() <= cfg.max_occluded:
                    mask = (xx >= x0) & (xx <= x0 + w) & (yy >= y0) & (yy <= y0 + h)
                    shade = rng.uniform(0.2, 0.35)
                    image[:, mask] = shade
                    vis[covered] = UNLABELED
                    break

        kps = np.concatenate([joints, vis[:, None]], axis=1)
        bbox = _bbox_of(joints, pad, cfg.width, cfg.height)
        a, b = template.head
        samples.append(PoseSample(
            id=f"synth-{seed}-{index:06d}", keypoints=kps, bbox=bbox,
            image=image.astype(np.float32), head_size=float(np.hypot(*(joints[a] - joints[b]))),
            width=cfg.width, height=cfg.height,
        ))
    return samples


def flip_sample(sample: PoseSample, template: SkeletonTemplate) -> PoseSample:
    """Mirror horizontally and swap symmetric joints."""
    image = sample.load_image()[:, :, ::-1].copy()
    w = image.shape[2]
    kps = sample.keypoints.copy()
    kps[:, 0] = w - 1 - kps[:, 0]
    kps = kps[template.flip_permutation()]
    x, y, bw, bh = sample.bbox
    return replace(sample, image=image, keypoints=kps, bbox=(w - 1 - x - bw, y, bw, bh),
                   id=sample.id + "-flip")


# ------------------------------------------------------------ image files


def write_pnm(path, image) -> None:
    """Binary PPM (3 channels) or PGM (1 channel) at 8 bits, from ``[c,h,w]`` in [0,1]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    c, h, w = img.shape
    data = np.round(np.clip(img, 0, 1) * 255.0).astype(np.uint8)
    if c == 3:
        magic, payload = b"P6", data.transpose(1, 2, 0).tobytes()
    elif c == 1:
        magic, payload = b"P5", data[0].tobytes()
    else:
        raise ValueError(f"cannot write {c}-channel image as PNM")
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode("ascii"))
        fh.write(payload)


def _read_header_tokens(buf: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while buf[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    return tokens, pos + 1


def read_pnm(path) -> np.ndarray:
    """Read binary P5/P6 (8- or 16-bit) into ``[c,h,w]`` floats in [0,1]."""
    buf = Path(path).read_bytes()
    tokens, offset = _read_header_tokens(buf, 4)
    magic = tokens[0]
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported PNM type {magic!r}")
    c = 3 if magic == b"P6" else 1
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    data = np.frombuffer(buf, dtype=dtype, count=w * h * c, offset=offset)
    img = data.reshape(h, w, c).transpose(2, 0, 1).astype(np.float32) / float(maxval)
    return img


# ------------------------------------------------------------ annotations


def _require(obj, key, path, kind=None):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(path, f"missing field {key!r}")
    value = obj[key]
    if kind is not None and not isinstance(value, kind):
        raise SchemaError(f"{path}.{key}", f"expected {getattr(kind, '__name__', kind)}")
    return value


def load_annotations(path, num_keypoints: int = 17) -> list:
    """Parse a COCO-style keypoint file into samples whose images load lazily.

    Raises SchemaError naming the JSON path of the first offending field.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("$", "top level must be an object")
    images = _require(doc, "images", "$", list)
    annotations = _require(doc, "annotations", "$", list)
    by_id = {}
    for i, im in enumerate(images):
        where = f"$.images[{i}]"
        image_id = _require(im, "id", where)
        by_id[image_id] = dict(
            file_name=_require(im, "file_name", where, str),
            width=_require(im, "width", where, (int, float)),
            height=_require(im, "height", where, (int, float)),
        )
    samples = []
    for i, ann in enumerate(annotations):
        where = f"$.annotations[{i}]"
        ann_id = _require(ann, "id", where)
        image_id = _require(ann, "image_id", where)
        if image_id not in by_id:
            raise SchemaError(f"{where}.image_id", f"unknown image id {image_id!r}")
        kps = _require(ann, "keypoints", where, list)
        if len(kps) != 3 * num_keypoints:
            raise SchemaError(f"{where}.keypoints",
                              f"expected {3 * num_keypoints} numbers, got {len(kps)}")
        if not all(isinstance(v, (int, float)) for v in kps):
            raise SchemaError(f"{where}.keypoints", "entries must be numbers")
        bbox = _require(ann, "bbox", where, list)
        if len(bbox) != 4 or not all(isinstance(v, (int, float)) for v in bbox):
            raise SchemaError(f"{where}.bbox", "expected [x, y, w, h]")
        head = ann.get("head_size")
        if head is not None and not isinstance(head, (int, float)):
            raise SchemaError(f"{where}.head_size", "expected a number")
        info = by_id[image_id]
        samples.append(PoseSample(
            id=str(ann_id), keypoints=np.asarray(kps, dtype=np.float64).reshape(-1, 3),
            bbox=tuple(bbox), head_size=None if head is None else float(head),
            image_path=str(path.parent / info["file_name"]),
            width=int(info["width"]), height=int(info["height"]),
        ))
    return samples


def save_annotations(samples, path, write_images: bool = True,
                     template: Optional[SkeletonTemplate] = None) -> None:
    """Write samples as a COCO-style file, images as PPM/PGM next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    images, annotations = [], []
    for k, s in enumerate(samples):
        img = s.image
        c = img.shape[0] if img is not None else 3
        file_name = f"{s.id}.{'ppm' if c == 3 else 'pgm'}"
        if write_images and img is not None:
            write_pnm(path.parent / file_name, img)
        h = s.height if s.height is not None else (img.shape[1] if img is not None else 0)
        w = s.width if s.width is not None else (img.shape[2] if img is not None else 0)
        images.append({"id": k, "file_name": file_name, "width": int(w), "height": int(h)})
        ann = {"id": s.id, "image_id": k,
               "keypoints": [float(v) for v in s.keypoints.reshape(-1)],
               "bbox": [float(v) for v in s.bbox]}
        if s.head_size is not None:
            ann["head_size"] = float(s.head_size)
        annotations.append(ann)
    names = template.joints if template is not None else [f"kp{i}" for i in range(samples[0].keypoints.shape[0])]
    skeleton = [[p + 1, c + 1] for p, c in template.edges] if template is not None else []
    doc = {"images": images, "annotations": annotations,
           "categories": [{"id": 1, "name": "person", "keypoints": names, "skeleton": skeleton}]}
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc))
    os.replace(tmp, path)


def save_predictions(records, path) -> None:
    """COCO results format: ``[{"image_id", "category_id", "keypoints", "score"}]``."""
    Path(path).write_text(json.dumps(records, indent=1))


def prediction_records(samples, coords, scores) -> list:
    out = []
    for s, xy, sc in zip(samples, coords, scores):
        kps = np.concatenate([xy, sc[:, None]], axis=1).reshape(-1)
        out.append({"image_id": s.id, "category_id": 1,
                    "keypoints": [round(float(v), 4) for v in kps],
                    "score": float(np.mean(sc))})
    return out


def load_predictions(path) -> list:
    records = json.loads(Path(path).read_text())
    if not isinstance(records, list):
        raise SchemaError("$", "predictions must be a list")
    for i, r in enumerate(records):
        for key in ("image_id", "keypoints", "score"):
            _require(r, key, f"$[{i}]")
    return records


# ------------------------------------------------------------------ crops


@dataclass
class CropTransform:
    """Affine map ``input = A @ [x, y, 1]`` between original and model-input pixels."""

    matrix: np.ndarray

    @property
    def inverse_matrix(self) -> np.ndarray:
        full = np.vstack([self.matrix, [0.0, 0.0, 1.0]])
        return np.linalg.inv(full)[:2]

    def forward(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        return xy @ self.matrix[:, :2].T + self.matrix[:, 2]

    def inverse(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=np.float64)
        inv = self.inverse_matrix
        return uv @ inv[:, :2].T + inv[:, 2]


def crop_to_input(sample: PoseSample, input_size):
    """Expand the box to the input aspect ratio about its center and resample.

    Returns ``(image [c, H_in, W_in], CropTransform, keypoints [N, 3])``;
    the keypoints are mapped into input pixels, visibility unchanged.
    """
    in_h, in_w = input_size
    x, y, w, h = sample.bbox
    if w <= 0 or h <= 0:
        raise DegenerateBox(f"bbox {sample.bbox} of sample {sample.id} has zero area")
    aspect = in_w / in_h
    cx, cy = x + w / 2.0, y + h / 2.0
    if w / h > aspect:
        h = w / aspect
    else:
        w = h * aspect
    s = in_w / w
    matrix = np.array([[s, 0.0, -(cx - w / 2.0) * s],
                       [0.0, s, -(cy - h / 2.0) * s]])
    transform = CropTransform(matrix)
    image = sample.load_image()
    vv, uu = np.mgrid[0:in_h, 0:in_w].astype(np.float64)
    src = transform.inverse(np.stack([uu.ravel(), vv.ravel()], axis=1))
    coords = np.stack([src[:, 1], src[:, 0]])
    out = np.stack([
        map_coordinates(ch.astype(np.float64), coords, order=1, mode="constant", cval=0.0)
        .reshape(in_h, in_w)
        for ch in image
    ]).astype(np.float32)
    kps = sample.keypoints.copy()
    kps[:, :2] = transform.forward(kps[:, :2])
    return out, transform, kps
