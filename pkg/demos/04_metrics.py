"""OKS, COCO-style AP and PCKh on hand-built predictions.

    python demos/04_metrics.py
"""

import math

import numpy as np

from tokenpose.metrics import EvalInstance, average_precision, format_table, oks, pckh

gt = np.array([[30.0, 10.0, 2], [25.0, 20.0, 2], [35.0, 20.0, 2], [30.0, 40.0, 1]])
scale, k = 40.0, np.full(4, 0.1)

print("distance  OKS")
for d in (0.0, 2.0, scale * 0.1 * math.sqrt(2), 10.0):
    inst = EvalInstance(gt=gt, pred=gt[:, :2] + [d, 0.0], scale=scale, k=k)
    print(f"{d:8.3f}  {oks(inst):.4f}")

rng = np.random.default_rng(0)
instances = []
for image in range(20):
    noise = rng.normal(0, rng.uniform(0.5, 6), (4, 2))
    instances.append(EvalInstance(gt=gt, pred=gt[:, :2] + noise, scale=scale, k=k,
                                  head_size=12.0, score=float(rng.random()), image_id=image))

ap = average_precision(instances)
print(format_table(["AP", "AP50", "AP75", "AR"],
                   [[100 * ap.ap, 100 * ap.ap50, 100 * ap.ap75, 100 * ap.ar]]))
res = pckh(instances)
names = ["head_top", "l_shoulder", "r_shoulder", "l_hip"]
print(format_table(list(res.grouped(names)), [list(res.grouped(names).values())]))
