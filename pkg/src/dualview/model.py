"""Composition of backbone, fusion cascade and expert head per run config."""

from __future__ import annotations

import numpy as np

from .backbone import Backbone, BackboneConfig, FeaturePyramid
from .config import TrainConfig
from .experts import ExpertEnsemble, gate_weights
from .fusion import FusionCascade, late_fusion
from .membank import ClassCenters
from .seeding import TAG_INIT, rng_for
from .tensor import Parameter, Tensor


class DualViewModel:
    def __init__(self, cfg: TrainConfig):
        cfg.validate()
        self.cfg = cfg
        dtype = np.float64 if cfg.dtype == "float64" else np.float32
        self.np_dtype = dtype
        rng = rng_for(cfg.seed, TAG_INIT)
        bcfg = BackboneConfig(
            base_channels=cfg.base_channels,
            proj_dim=cfg.proj_dim,
            in_channels=cfg.data.in_channels + 1,
            image_size=cfg.data.image_size,
            patches=cfg.patches,
        )
        if cfg.share_backbone:
            self.backbone_long = self.backbone_trans = Backbone(bcfg, rng, "backbone", dtype)
        else:
            self.backbone_long = Backbone(bcfg, rng, "backbone_long", dtype)
            self.backbone_trans = Backbone(bcfg, rng, "backbone_trans", dtype)
        self.cascade = None
        if not cfg.no_dsam:
            self.cascade = FusionCascade(
                bcfg.stage_channels(), cfg.data.image_size, cfg.patches, cfg.heads, rng, "fusion", dtype
            )
            fused_dim = 2 * self.cascade.out_dim
        else:
            fused_dim = 2 * bcfg.stage_channels()[-1]
        self.fused_dim = fused_dim
        n_experts = 1 if cfg.no_moe else cfg.data.n_classes
        self.head = ExpertEnsemble(fused_dim, cfg.data.n_classes, n_experts, rng, "head", dtype)

    def parameters(self) -> list[Parameter]:
        params = list(self.backbone_long.params)
        if self.backbone_trans is not self.backbone_long:
            params += self.backbone_trans.params
        if self.cascade is not None:
            params += self.cascade.params
        params += self.head.params
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names in model")
        return params

    def encode_views(self, x_long: Tensor, x_trans: Tensor) -> tuple[FeaturePyramid, FeaturePyramid]:
        """Encode both views; in single-view mode the present view's pyramid
        serves both slots (duplication keeps every downstream shape fixed)."""
        if self.cfg.single_view == "long":
            pyr = self.backbone_long.encode(x_long)
            return pyr, pyr
        if self.cfg.single_view == "trans":
            pyr = self.backbone_trans.encode(x_trans)
            return pyr, pyr
        return self.backbone_long.encode(x_long), self.backbone_trans.encode(x_trans)

    def fuse(self, pyr_long: FeaturePyramid, pyr_trans: FeaturePyramid) -> Tensor:
        if self.cascade is not None:
            return self.cascade.fuse(pyr_long, pyr_trans)
        return late_fusion(pyr_long, pyr_trans)

    def logits(self, pyr_long: FeaturePyramid, pyr_trans: FeaturePyramid, centers: ClassCenters) -> tuple[Tensor, Tensor | None]:
        """Returns (logits, gate weights or None when the gate is ablated)."""
        z_f = self.fuse(pyr_long, pyr_trans)
        if self.cfg.no_moe:
            return self.head.forward(z_f, None), None
        w = gate_weights(pyr_long.z, pyr_trans.z, centers, self.cfg.gate_stop_gradient)
        return self.head.forward(z_f, w), w
