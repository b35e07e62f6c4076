"""Architecture configuration and the named presets from the model table."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from typing import Optional

from .errors import ConfigError, IndivisibleHeads, NonDivisible, NonDivisiblePatch

PE_MODES = ("none", "learnable", "sine2d")
STEMS = ("none", "conv_stem")
STEM_DOWNSAMPLE = 4


@dataclass
class ModelConfig:
    input_h: int = 256
    input_w: int = 192
    channels: int = 3
    patch_h: int = 16
    patch_w: int = 12
    embed_dim: int = 192
    num_layers: int = 12
    num_heads: int = 16
    num_keypoints: int = 17
    heatmap_h: int = 64
    heatmap_w: int = 48
    mlp_ratio: float = 4.0
    pe_mode: str = "sine2d"
    fusion_layers: Optional[list] = None
    stem: str = "none"

    def __post_init__(self):
        if self.fusion_layers is not None:
            self.fusion_layers = [int(v) for v in self.fusion_layers]
        self.validate()

    def validate(self) -> None:
        for name in ("input_h", "input_w", "channels", "patch_h", "patch_w",
                     "embed_dim", "num_heads", "num_keypoints", "heatmap_h", "heatmap_w"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.num_layers < 0:
            raise ConfigError("num_layers must be >= 0")
        if self.mlp_ratio <= 0:
            raise ConfigError("mlp_ratio must be positive")
        if self.pe_mode not in PE_MODES:
            raise ConfigError(f"pe_mode must be one of {PE_MODES}, got {self.pe_mode!r}")
        if self.stem not in STEMS:
            raise ConfigError(f"stem must be one of {STEMS}, got {self.stem!r}")
        if self.embed_dim % self.num_heads:
            raise IndivisibleHeads(self.embed_dim, self.num_heads)
        if self.pe_mode == "sine2d" and self.embed_dim % 4:
            raise ConfigError("sine2d position embedding needs embed_dim divisible by 4")
        if self.stem == "conv_stem" and (
            self.input_h % STEM_DOWNSAMPLE or self.input_w % STEM_DOWNSAMPLE
        ):
            raise NonDivisible(
                f"conv_stem needs input divisible by {STEM_DOWNSAMPLE}, "
                f"got {self.input_h}x{self.input_w}"
            )
        fh, fw = self.feature_size
        if fh % self.patch_h or fw % self.patch_w:
            raise NonDivisiblePatch(fh, fw, self.patch_h, self.patch_w)
        if self.fusion_layers is not None:
            layers = self.fusion_layers
            if not layers:
                raise ConfigError("fusion_layers must be non-empty when given")
            if any(b <= a for a, b in zip(layers, layers[1:])):
                raise ConfigError("fusion_layers must be distinct and ascending")
            if layers[0] < 1 or layers[-1] > self.num_layers:
                raise ConfigError(
                    f"fusion_layers must lie in 1..{self.num_layers}, got {layers}"
                )

    @property
    def feature_size(self) -> tuple:
        """Spatial size of the map that gets split into patches."""
        if self.stem == "conv_stem":
            return self.input_h // STEM_DOWNSAMPLE, self.input_w // STEM_DOWNSAMPLE
        return self.input_h, self.input_w

    @property
    def grid(self) -> tuple:
        fh, fw = self.feature_size
        return fh // self.patch_h, fw // self.patch_w

    @property
    def num_visual(self) -> int:
        gh, gw = self.grid
        return gh * gw

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def mlp_hidden(self) -> int:
        return int(round(self.embed_dim * self.mlp_ratio))

    @property
    def head_in(self) -> int:
        k = len(self.fusion_layers) if self.fusion_layers else 1
        return k * self.embed_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown ModelConfig fields: {sorted(unknown)}")
        return cls(**data)

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))


def tokenpose_t(**overrides) -> ModelConfig:
    """Pure-transformer tiny variant: 12 layers, d=192, 16 heads, 16x12 patches."""
    base = dict(input_h=256, input_w=192, patch_h=16, patch_w=12, embed_dim=192,
                num_layers=12, num_heads=16, num_keypoints=17, heatmap_h=64,
                heatmap_w=48, mlp_ratio=4.0, pe_mode="sine2d", stem="none")
    base.update(overrides)
    return ModelConfig(**base)


def tokenpose_s_v1(**overrides) -> ModelConfig:
    """Hybrid small variant: conv stem to 1/4 resolution, then 4x3 patches, 8 heads."""
    base = dict(input_h=256, input_w=192, patch_h=4, patch_w=3, embed_dim=192,
                num_layers=12, num_heads=8, num_keypoints=17, heatmap_h=64,
                heatmap_w=48, mlp_ratio=4.0, pe_mode="sine2d", stem="conv_stem")
    base.update(overrides)
    return ModelConfig(**base)


def desk_toy(**overrides) -> ModelConfig:
    """The small configuration used for the synthetic overfit/generalization runs."""
    base = dict(input_h=64, input_w=64, channels=3, patch_h=8, patch_w=8,
                embed_dim=64, num_layers=4, num_heads=4, num_keypoints=8,
                heatmap_h=16, heatmap_w=16, mlp_ratio=4.0, pe_mode="sine2d",
                stem="none")
    base.update(overrides)
    return ModelConfig(**base)
