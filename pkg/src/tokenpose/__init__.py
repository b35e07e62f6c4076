"""Keypoint-token transformer for 2D pose estimation, built on a small numpy autodiff core."""

from .config import ModelConfig, desk_toy, tokenpose_s_v1, tokenpose_t
from .model import TokenPose, count_params, init_params, param_shapes

__all__ = [
    "ModelConfig",
    "TokenPose",
    "count_params",
    "desk_toy",
    "init_params",
    "param_shapes",
    "tokenpose_s_v1",
    "tokenpose_t",
]

__version__ = "0.1.0"
