"""Train the desk-scale model on synthetic figures and evaluate it.

A few hundred steps already give visibly better than chance keypoints;
the acceptance runs use 2,000 to 10,000 steps.

    python demos/06_train_desk_toy.py [steps] [out_dir]
"""

import logging
import sys

from tokenpose.config import desk_toy
from tokenpose.metrics import format_table
from tokenpose.train import TrainConfig, evaluate, load_datasets, prepare, train

logging.basicConfig(level=logging.INFO, format="%(message)s")
steps = int(sys.argv[1]) if len(sys.argv) > 1 else 400
out_dir = sys.argv[2] if len(sys.argv) > 2 else "demo_run"

epochs = max(3, steps // 32)
cfg = TrainConfig(model=desk_toy(), train_count=512, val_count=64, batch_size=16,
                  epochs=epochs, lr_drop_epochs=sorted({int(epochs * 0.67), int(epochs * 0.87)}),
                  max_steps=steps, eval_every=max(1, epochs // 4), out_dir=out_dir,
                  checkpoint_every=max(1, epochs // 2))
result = train(cfg)

_, val = load_datasets(cfg)
report = evaluate(result.model, prepare(val, cfg.model))
print(format_table(["steps", "mean err px", "PCKh@0.5", "AP"],
                   [[result.checkpoint.step, report.mean_error, report.pckh.mean,
                     100 * report.ap.ap]]))
print(f"checkpoints and log.jsonl in {out_dir}/")
