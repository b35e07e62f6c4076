"""Parameter counts of the table presets and of width/depth scaling.

    python demos/08_parameter_counts.py
"""

from tokenpose.config import desk_toy, tokenpose_s_v1, tokenpose_t
from tokenpose.metrics import format_table
from tokenpose.model import count_params

rows = []
for name, cfg in [("TokenPose-T", tokenpose_t()), ("TokenPose-S-v1", tokenpose_s_v1()),
                  ("desk toy", desk_toy()),
                  ("T, fusion 4/8/12", tokenpose_t(fusion_layers=[4, 8, 12])),
                  ("T, d=384", tokenpose_t(embed_dim=384)),
                  ("T, 24 layers", tokenpose_t(num_layers=24))]:
    n = count_params(cfg)
    rows.append([name, cfg.num_layers, cfg.embed_dim, f"{n:,}", f"{n / 1e6:.2f}M"])
print(format_table(["config", "layers", "d", "params", ""], rows))
n = count_params(tokenpose_t())
print(f"TokenPose-T vs the 5.8M table value: {100 * (n - 5.8e6) / 5.8e6:+.1f}%")
