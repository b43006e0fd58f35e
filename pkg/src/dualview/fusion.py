"""Cascaded downsample-attention fusion of the feature pyramid.

Each stage max-pools the map, splits channels into P groups ("tokens"
carrying their spatial extent), runs multi-head self-attention over the
tokens (no positional encoding, residual around attention only), and
applies a per-token affine+relu that doubles the channel count.  Stages
chain by summation with the next pyramid level; one weight set serves
both views.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .backbone import FeaturePyramid
from .tensor import Parameter, Tensor


class DownsampleAttentionStage:
    """(B, C, H, W) -> (B, 2C, H/2, W/2) for the construction-time C, H, W."""

    def __init__(
        self,
        channels: int,
        height: int,
        width: int,
        patches: int,
        heads: int,
        rng: np.random.Generator,
        name: str,
        dtype=np.float64,
    ):
        if height % 2 or width % 2:
            raise ValueError(f"{name}: spatial size {height}x{width} must be even for pooling")
        if channels % patches:
            raise ValueError(f"{name}: channels {channels} not divisible by patch count {patches}")
        self.channels = channels
        self.height = height
        self.width = width
        self.patches = patches
        self.heads = heads
        self.token_dim = (channels // patches) * (height // 2) * (width // 2)
        if self.token_dim % heads:
            raise ValueError(f"{name}: token dim {self.token_dim} not divisible by {heads} heads")
        d = self.token_dim
        std = np.sqrt(1.0 / d)

        def lin(shape, suffix):
            w = Parameter(rng.normal(0.0, std, shape).astype(dtype), f"{name}.{suffix}.weight")
            b = Parameter(np.zeros(shape[1], dtype=dtype), f"{name}.{suffix}.bias")
            return w, b

        self.wq, self.bq = lin((d, d), "attn.q")
        self.wk, self.bk = lin((d, d), "attn.k")
        self.wv, self.bv = lin((d, d), "attn.v")
        self.wo, self.bo = lin((d, d), "attn.out")
        self.wf, self.bf = lin((d, 2 * d), "ffn")
        self.params = [
            self.wq, self.bq, self.wk, self.bk, self.wv, self.bv,
            self.wo, self.bo, self.wf, self.bf,
        ]

    def _heads_split(self, x: Tensor, b: int, p: int) -> Tensor:
        dh = self.token_dim // self.heads
        return T.transpose(T.reshape(x, (b, p, self.heads, dh)), (0, 2, 1, 3))

    def token_forward(self, tokens: Tensor) -> Tensor:
        """(B, P, D) -> (B, P, 2D): attention with residual, then the
        channel-doubling per-token map.  Permutation-equivariant in P."""
        b, p, d = tokens.shape
        q = self._heads_split(T.linear(tokens, self.wq, self.bq), b, p)
        k = self._heads_split(T.linear(tokens, self.wk, self.bk), b, p)
        v = self._heads_split(T.linear(tokens, self.wv, self.bv), b, p)
        att = T.scaled_dot_product_attention(q, k, v)
        att = T.reshape(T.transpose(att, (0, 2, 1, 3)), (b, p, d))
        res = tokens + T.linear(att, self.wo, self.bo)
        return T.relu(T.linear(res, self.wf, self.bf))

    def forward(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        if c != self.channels or h != self.height or w != self.width:
            raise T.ShapeError("downsample_attention", x.shape, (self.channels, self.height, self.width))
        pooled = T.max_pool2x2(x)
        h2, w2 = h // 2, w // 2
        group = c // self.patches
        tokens = T.reshape(pooled, (b, self.patches, group * h2 * w2))
        out = self.token_forward(tokens)
        return T.reshape(out, (b, 2 * c, h2, w2))


class FusionCascade:
    """Four chained stages; the final map is pooled per view and the two
    view vectors concatenated into the fused feature."""

    def __init__(
        self,
        stage_channels: list[int],
        image_size: int,
        patches: int,
        heads: int,
        rng: np.random.Generator,
        name: str = "fusion",
        dtype=np.float64,
    ):
        self.stages: list[DownsampleAttentionStage] = []
        self.params: list[Parameter] = []
        size = image_size // 2  # stage-1 map extent
        for i, c in enumerate(stage_channels, start=1):
            stage = DownsampleAttentionStage(c, size, size, patches, heads, rng, f"{name}.stage{i}", dtype)
            self.stages.append(stage)
            self.params += stage.params
            size //= 2
        self.out_dim = 2 * stage_channels[-1]  # per view, after the last doubling

    def forward_view(self, pyramid: FeaturePyramid) -> Tensor:
        maps = pyramid.stages
        if len(maps) != 4:
            raise T.ShapeError("fusion.cascade", (len(maps),))
        h = self.stages[0].forward(maps[0])
        for stage, nxt in zip(self.stages[1:], maps[1:]):
            h = stage.forward(h + nxt)
        return T.global_avg_pool(h)

    def fuse(self, pyr_long: FeaturePyramid, pyr_trans: FeaturePyramid) -> Tensor:
        return T.concat([self.forward_view(pyr_long), self.forward_view(pyr_trans)], axis=1)


def late_fusion(pyr_long: FeaturePyramid, pyr_trans: FeaturePyramid) -> Tensor:
    """Cascade bypass: concat of pooled last-stage maps from both views."""
    return T.concat([T.global_avg_pool(pyr_long.stages[-1]), T.global_avg_pool(pyr_trans.stages[-1])], axis=1)
