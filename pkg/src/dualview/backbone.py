"""Four-stage convolutional encoder shared by both views.

Each stage halves the spatial extent (stride-2 conv) and doubles the
channel count, yielding the pyramid the fusion cascade needs; a global
average pool plus one affine map projects the last stage into the
unit-norm representation feature consumed by the memory bank and gate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


@dataclass(frozen=True)
class BackboneConfig:
    base_channels: int = 8
    proj_dim: int = 128
    in_channels: int = 2  # image channels + spacing plane
    image_size: int = 32
    patches: int = 4  # fusion patch count; stage channels must divide by it

    def validate(self) -> None:
        if self.base_channels < 4:
            raise ValueError(f"base_channels must be >= 4, got {self.base_channels}")
        if self.base_channels % self.patches:
            raise ValueError(
                f"base_channels ({self.base_channels}) must be divisible by patch count ({self.patches})"
            )
        if self.image_size % 16:
            raise ValueError(f"image_size must be divisible by 16, got {self.image_size}")

    def stage_channels(self) -> list[int]:
        return [self.base_channels * (1 << i) for i in range(4)]


@dataclass
class FeaturePyramid:
    """Per-stage maps (B, c*2^i, H/2^(i+1), W/2^(i+1)) plus unit-norm rows z (B, d)."""

    stages: list[Tensor]
    z: Tensor


def _he_conv(rng: np.random.Generator, cout: int, cin: int, k: int, dtype) -> np.ndarray:
    std = np.sqrt(2.0 / (cin * k * k))
    return (rng.normal(0.0, std, (cout, cin, k, k))).astype(dtype)


class Backbone:
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator, name: str = "backbone", dtype=np.float64):
        cfg.validate()
        self.cfg = cfg
        self.params: list[Parameter] = []
        self._stages = []
        cin = cfg.in_channels
        for i, cout in enumerate(cfg.stage_channels(), start=1):
            w1 = Parameter(_he_conv(rng, cout, cin, 3, dtype), f"{name}.stage{i}.conv1.weight")
            b1 = Parameter(np.zeros(cout, dtype=dtype), f"{name}.stage{i}.conv1.bias")
            w2 = Parameter(_he_conv(rng, cout, cout, 3, dtype), f"{name}.stage{i}.conv2.weight")
            b2 = Parameter(np.zeros(cout, dtype=dtype), f"{name}.stage{i}.conv2.bias")
            self._stages.append((w1, b1, w2, b2))
            self.params += [w1, b1, w2, b2]
            cin = cout
        c_last = cfg.stage_channels()[-1]
        std = np.sqrt(1.0 / c_last)
        self.proj_w = Parameter(rng.normal(0.0, std, (c_last, cfg.proj_dim)).astype(dtype), f"{name}.proj.weight")
        self.proj_b = Parameter(np.zeros(cfg.proj_dim, dtype=dtype), f"{name}.proj.bias")
        self.params += [self.proj_w, self.proj_b]

    def encode(self, x: Tensor) -> FeaturePyramid:
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise T.ShapeError("backbone.encode", x.shape, (self.cfg.in_channels,))
        stages = []
        h = x
        for w1, b1, w2, b2 in self._stages:
            h = T.relu(T.conv2d(h, w1, b1, stride=2, padding=1))
            h = T.relu(T.conv2d(h, w2, b2, stride=1, padding=1))
            stages.append(h)
        pooled = T.global_avg_pool(stages[-1])
        z = T.l2_normalize(T.linear(pooled, self.proj_w, self.proj_b), axis=1)
        return FeaturePyramid(stages=stages, z=z)
