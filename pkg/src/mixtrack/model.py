"""Backbone + localization head assembled into one trackable model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import TokenBatch, _tokens_to_grid
from .backbone import (
    BackboneConfig,
    TemplateCache,
    build_backbone,
    hierarchical_base,
    hierarchical_tiny,
    plain_base,
    plain_tiny,
)
from .heads import HEAD_KINDS, PlainCornerHead, PyramidCornerHead, QueryHead
from .nn import Module
from .rng import stream
from .tensor import Tensor, UsageError

BACKBONE_PRESETS = {
    "plain-tiny": plain_tiny,
    "plain-base": plain_base,
    "hierarchical-tiny": hierarchical_tiny,
    "hierarchical-base": hierarchical_base,
}


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=plain_tiny)
    head: str = "pyramid"          # "corner" | "pyramid" | "query"
    head_norm: str = "group"       # "group" | "batch"

    def __post_init__(self):
        if self.head not in HEAD_KINDS:
            raise UsageError(f"unknown head kind {self.head!r}")


@dataclass
class ModelOutput:
    boxes: Tensor                       # (B, 4) normalized corners in crop coords
    search_feat: Tensor | None = None   # (B, C, h, w) search feature map
    batch: TokenBatch | None = None
    corner_maps: object = None


class TrackModel(Module):
    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        backbone_cfg = cfg.backbone
        if cfg.head == "query" and not backbone_cfg.use_reg_token:
            from dataclasses import replace

            backbone_cfg = replace(backbone_cfg, use_reg_token=True)
        self.cfg = ModelConfig(backbone_cfg, cfg.head, cfg.head_norm)
        self.backbone = build_backbone(backbone_cfg, rng)
        width = backbone_cfg.final_width()
        if cfg.head == "corner":
            self.head = PlainCornerHead(width, rng, norm=cfg.head_norm)
        elif cfg.head == "pyramid":
            self.head = PyramidCornerHead(width, rng, norm=cfg.head_norm)
        else:
            self.head = QueryHead(width, rng)

    def _search_feat(self, backbone_out, batch: TokenBatch) -> Tensor:
        if self.cfg.backbone.variant == "hierarchical":
            return backbone_out  # already a (B, C, h, w) map
        grid = self.backbone.search_grid
        return _tokens_to_grid(backbone_out, grid, 1)

    def _apply_head(self, feat: Tensor, batch: TokenBatch) -> ModelOutput:
        if self.cfg.head == "query":
            return ModelOutput(boxes=self.head(batch), search_feat=feat, batch=batch)
        boxes, maps = self.head(feat)
        return ModelOutput(boxes=boxes, search_feat=feat, batch=batch, corner_maps=maps)

    def forward(self, templates: Tensor, search: Tensor, asymmetric: bool | None = None) -> ModelOutput:
        backbone_out, batch = self.backbone(templates, search, asymmetric=asymmetric)
        return self._apply_head(self._search_feat(backbone_out, batch), batch)

    def __call__(self, templates, search, **kw) -> ModelOutput:
        return self.forward(templates, search, **kw)

    # template caching (asymmetric inference)

    def build_template_cache(self, templates: Tensor) -> TemplateCache:
        return self.backbone.build_template_cache(templates)

    def forward_cached(self, search: Tensor, cache: TemplateCache) -> ModelOutput:
        backbone_out, batch = self.backbone.forward_cached(search, cache)
        return self._apply_head(self._search_feat(backbone_out, batch), batch)


def build_model(cfg: ModelConfig, seed: int) -> TrackModel:
    return TrackModel(cfg, stream(seed, "model-init"))


def images_to_tensor(images: np.ndarray) -> Tensor:
    """uint8 or float pixel arrays -> float tensor scaled to [0, 1]."""
    arr = np.asarray(images)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    return Tensor(arr)
