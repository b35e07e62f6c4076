"""Render a synthetic stick-figure set, save it COCO-style and crop top-down.

    python demos/05_synthetic_data.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from tokenpose.data import (
    SynthConfig,
    crop_to_input,
    generate_synthetic,
    get_template,
    load_annotations,
    save_annotations,
)

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_data")
template = get_template("stick8")
samples = generate_synthetic(seed=3, count=6, template=template,
                             cfg=SynthConfig(occlusion_rate=0.5))
for s in samples:
    hidden = [template.joints[i] for i in np.nonzero(~s.visible)[0]]
    print(f"{s.id}: head size {s.head_size:5.2f}px, bbox {np.round(s.bbox, 1)}, hidden {hidden}")

save_annotations(samples, out / "annotations.json", template=template)
again = load_annotations(out / "annotations.json", num_keypoints=template.num_joints)
print(f"wrote {len(again)} annotations and images to {out}/")

image, tf, kps = crop_to_input(again[0], (64, 48))
print("top-down crop:", image.shape, "| first keypoint in crop:", np.round(kps[0, :2], 2),
      "| mapped back:", np.round(tf.inverse(kps[:1, :2])[0], 2))
