"""Export attention maps and keypoint constraint tables from a checkpoint.

    python demos/07_attention_export.py demo_run/final.tkpz [out_dir]

Without a checkpoint argument an untrained model is used, which still
shows the file layout.
"""

import json
import sys
from pathlib import Path

from tokenpose.config import desk_toy
from tokenpose.data import generate_synthetic, get_template
from tokenpose.model import TokenPose
from tokenpose.visualize import export_attention

source = sys.argv[1] if len(sys.argv) > 1 else TokenPose(desk_toy(), seed=0)
out = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_attention")
names = get_template("stick8").joints
sample = generate_synthetic(seed=2, count=1)[0]

index = export_attention(source, sample, out, names=names, top_k=2)
print(f"{len(index['spatial'])} spatial maps, {len(index['keypoint_keypoint'])} "
      f"keypoint-keypoint matrices in {out}/")
table = json.loads((out / "constraints.json").read_text())["constraints"]
print("keypoint     top-2 constraints")
for name, top in table.items():
    print(f"{name:12s} " + ", ".join(f"{e['keypoint']} ({e['score']:.3f})" for e in top))
