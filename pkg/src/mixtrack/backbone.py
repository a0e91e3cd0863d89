"""Backbones: hierarchical (conv-projection) and plain (linear-projection).

Both variants consume T template crops plus one search crop and produce
search features for a localization head. The plain variant adds per-group
positional embeddings and supports token dropping (needed for masked
pretraining); the hierarchical variant relies on its convolutions for
spatial structure and uses no positional embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .attention import BlockCache, BlockRecord, ConvMixBlock, SlimMixBlock, TokenBatch, _grid_to_tokens, _tokens_to_grid
from .nn import Conv2d, LayerNorm, Module, ModuleList, trunc_normal
from .tensor import DimensionError, Tensor, UsageError, concat, narrow, transpose


def conv_out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise DimensionError(f"embedding collapses {size}px below one cell")
    return out


@dataclass(frozen=True)
class StageSpec:
    blocks: int
    width: int
    heads: int
    patch_kernel: int
    patch_stride: int
    patch_padding: int
    mlp_ratio: int = 4


@dataclass(frozen=True)
class BackboneConfig:
    variant: str                      # "hierarchical" | "plain"
    stages: tuple[StageSpec, ...]
    template_size: int
    search_size: int
    asymmetric: bool = True
    pos_embed: str = "sincos-frozen"  # plain only; hierarchical ignores it
    use_reg_token: bool = False

    def __post_init__(self):
        if self.variant not in ("hierarchical", "plain"):
            raise UsageError(f"unknown variant {self.variant!r}")
        if self.variant == "plain" and len(self.stages) != 1:
            raise UsageError("plain variant is single-stage")

    def stage_grids(self, size: int) -> list[tuple[int, int]]:
        grids = []
        for s in self.stages:
            size = conv_out_size(size, s.patch_kernel, s.patch_stride, s.patch_padding)
            grids.append((size, size))
        return grids

    def template_grids(self) -> list[tuple[int, int]]:
        return self.stage_grids(self.template_size)

    def search_grids(self) -> list[tuple[int, int]]:
        return self.stage_grids(self.search_size)

    def final_width(self) -> int:
        return self.stages[-1].width

    def token_summary(self, num_templates: int) -> dict:
        """Pure shape arithmetic; never instantiates weights."""
        tg = self.template_grids()[-1]
        sg = self.search_grids()[-1]
        n_t = tg[0] * tg[1]
        n_s = sg[0] * sg[1]
        return {
            "template_grid": tg,
            "search_grid": sg,
            "tokens_per_template": n_t,
            "search_tokens": n_s,
            "total_tokens": num_templates * n_t + n_s,
            "width": self.final_width(),
        }


def hierarchical_base() -> BackboneConfig:
    """Three-stage conv-attention backbone at reference scale
    (128px templates, 320px search)."""
    return BackboneConfig(
        variant="hierarchical",
        stages=(
            StageSpec(1, 64, 1, patch_kernel=7, patch_stride=4, patch_padding=3),
            StageSpec(4, 192, 3, patch_kernel=3, patch_stride=2, patch_padding=1),
            StageSpec(16, 384, 6, patch_kernel=3, patch_stride=2, patch_padding=1),
        ),
        template_size=128,
        search_size=320,
        pos_embed="none",
    )


def hierarchical_tiny() -> BackboneConfig:
    """Desk-scale hierarchical config used by tests and gradient checks."""
    return BackboneConfig(
        variant="hierarchical",
        stages=(
            StageSpec(1, 8, 1, patch_kernel=7, patch_stride=4, patch_padding=3),
            StageSpec(1, 16, 2, patch_kernel=3, patch_stride=2, patch_padding=1),
            StageSpec(2, 24, 4, patch_kernel=3, patch_stride=2, patch_padding=1),
        ),
        template_size=32,
        search_size=64,
        pos_embed="none",
    )


def plain_base() -> BackboneConfig:
    """Single-stage 12-layer/768-wide backbone (128px templates, 288px search)."""
    return BackboneConfig(
        variant="plain",
        stages=(StageSpec(12, 768, 12, patch_kernel=16, patch_stride=16, patch_padding=0),),
        template_size=128,
        search_size=288,
    )


def plain_tiny() -> BackboneConfig:
    """The trainable toy default: 4 layers, width 64, 4 heads, patch 8."""
    return BackboneConfig(
        variant="plain",
        stages=(StageSpec(4, 64, 4, patch_kernel=8, patch_stride=8, patch_padding=0),),
        template_size=48,
        search_size=96,
    )


# -- positional embeddings -------------------------------------------------------


def sincos_table(grid: tuple[int, int], dim: int) -> np.ndarray:
    """Deterministic 2-D sine/cosine table, (h*w, dim), row-major grid order.

    Half the channels encode the row coordinate and half the column, each
    as interleaved [sin(pos*omega), cos(pos*omega)] with
    omega_i = 1 / 10000^(i / (dim/4)).
    """
    if dim % 4:
        raise DimensionError("sincos embedding needs width divisible by 4")
    h, w = grid
    half = dim // 2
    omega = 1.0 / (10000.0 ** (np.arange(half // 2, dtype=np.float64) / (half // 2)))

    def encode(pos):
        ang = np.outer(pos, omega)
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)

    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return np.concatenate([encode(ys.reshape(-1)), encode(xs.reshape(-1))], axis=1)


def _resize_table(table: np.ndarray, src_grid, dst_grid) -> np.ndarray:
    """Bilinearly interpolate a (h*w, C) table onto a new grid."""
    from .tensor import bilinear_resize

    h, w = src_grid
    c = table.shape[1]
    as_map = Tensor(table.reshape(h, w, c).transpose(2, 0, 1))
    resized = bilinear_resize(as_map, dst_grid[0], dst_grid[1])
    return resized.data.transpose(1, 2, 0).reshape(dst_grid[0] * dst_grid[1], c)


POS_EMBED_KINDS = ("sincos-frozen", "interp-frozen", "interp-learnable", "none")
_INTERP_BASE_GRID = (8, 8)


class PositionalEmbedding(Module):
    """Two per-group tables of different lengths (templates vs search).

    "sincos-frozen" builds both tables in closed form; the "interp" kinds
    start from a trunc-normal table on a fixed base grid and bilinearly
    interpolate it onto each target grid, frozen or learnable.
    """

    def __init__(self, kind: str, template_grid, search_grid, dim: int, rng):
        super().__init__()
        if kind not in POS_EMBED_KINDS:
            raise UsageError(f"unknown positional embedding kind {kind!r}")
        self.kind = kind
        self.template_grid = template_grid
        self.search_grid = search_grid
        if kind == "none":
            return
        if kind == "sincos-frozen":
            tpl = sincos_table(template_grid, dim)
            srch = sincos_table(search_grid, dim)
        else:
            base = trunc_normal((_INTERP_BASE_GRID[0] * _INTERP_BASE_GRID[1], dim), 0.02, rng)
            tpl = _resize_table(base, _INTERP_BASE_GRID, template_grid)
            srch = _resize_table(base, _INTERP_BASE_GRID, search_grid)
        if kind == "interp-learnable":
            self.template_table = Tensor(tpl, requires_grad=True)
            self.search_table = Tensor(srch, requires_grad=True)
        else:
            self.register_buffer("template_table", Tensor(tpl))
            self.register_buffer("search_table", Tensor(srch))

    def add_to(self, tpl: Tensor | None, srch: Tensor | None, num_templates: int,
               search_index=None):
        """Add tables to each group; each template reuses the template table.

        ``search_index`` optionally selects a token subset of the search
        table (visible tokens during masked pretraining).
        """
        if self.kind == "none":
            return tpl, srch
        if tpl is not None:
            n_t = self.template_grid[0] * self.template_grid[1]
            if tpl.shape[-2] != num_templates * n_t:
                raise DimensionError("template token count does not match table")
            table = self.template_table
            if num_templates > 1:
                table = concat([table] * num_templates, axis=0)
            tpl = tpl + table
        if srch is not None:
            table = self.search_table
            if search_index is not None:
                table = Tensor(table.data[np.asarray(search_index, dtype=np.int64)],
                               requires_grad=False)
            if srch.shape[-2] != table.shape[0]:
                raise DimensionError("search token count does not match table")
            srch = srch + table
        return tpl, srch


# -- caches and records ------------------------------------------------------------


@dataclass
class TemplateCache:
    """Template-side activations fixed once per template-set change."""

    blocks: list[BlockCache]
    final_template_tokens: Tensor       # post-norm (plain) final template tokens
    num_templates: int


@dataclass
class ForwardRecord:
    """Captures one block's attention weights during a forward pass."""

    layer: int
    block: BlockRecord = field(default_factory=BlockRecord)


# -- plain backbone ----------------------------------------------------------------


class PlainBackbone(Module):
    """Single-stage backbone of linear-projection mixed-attention blocks."""

    def __init__(self, cfg: BackboneConfig, rng):
        super().__init__()
        if cfg.variant != "plain":
            raise UsageError("PlainBackbone needs a plain config")
        self.cfg = cfg
        spec = cfg.stages[0]
        self.width = spec.width
        self.patch = Conv2d(3, spec.width, spec.patch_kernel, rng,
                            stride=spec.patch_stride, padding=spec.patch_padding)
        self.patch_norm = LayerNorm(spec.width)
        self.template_grid = cfg.template_grids()[0]
        self.search_grid = cfg.search_grids()[0]
        self.pos = PositionalEmbedding(cfg.pos_embed, self.template_grid, self.search_grid,
                                       spec.width, rng)
        self.blocks = ModuleList(
            SlimMixBlock(spec.width, spec.heads, rng, spec.mlp_ratio) for _ in range(spec.blocks)
        )
        self.norm_f = LayerNorm(spec.width)
        if cfg.use_reg_token:
            self.reg_token = Tensor(trunc_normal((1, 1, spec.width), 0.02, rng), requires_grad=True)

    # template/search images -> token groups

    def embed_templates(self, templates: Tensor) -> Tensor:
        """(B, T, 3, h, w) -> (B, T*n_t, C)."""
        b, t = templates.shape[0], templates.shape[1]
        maps = self.patch(templates.reshape(b * t, *templates.shape[2:]))
        return self.patch_norm(_grid_to_tokens(maps, b))

    def embed_search(self, search: Tensor) -> Tensor:
        """(B, 3, h, w) -> (B, n_s, C)."""
        return self.patch_norm(_grid_to_tokens(self.patch(search), search.shape[0]))

    def _append_reg(self, srch: Tensor) -> Tensor:
        b = srch.shape[0]
        tok = self.reg_token
        if b > 1:
            tok = concat([tok] * b, axis=0)
        return concat([srch, tok], axis=-2)

    def forward_tokens(self, tpl: Tensor, srch: Tensor, num_templates: int,
                       asymmetric: bool | None = None, record: ForwardRecord | None = None):
        """Run the block stack on prepared token groups; returns both groups
        post final norm."""
        asym = self.cfg.asymmetric if asymmetric is None else asymmetric
        for i, block in enumerate(self.blocks):
            rec = record.block if record is not None and record.layer == i else None
            rec_to = {} if rec is not None else None
            tpl, srch = block.forward_parts(tpl, srch, asym, rec_to)
            if rec is not None:
                rec.template = rec_to.get("template")
                rec.search = rec_to.get("search")
                rec.key_template_grid = self.template_grid
                rec.key_search_grid = self.search_grid
                rec.num_templates = num_templates
                rec.asymmetric = asym
        return self.norm_f(tpl), self.norm_f(srch)

    def forward(self, templates: Tensor, search: Tensor, asymmetric: bool | None = None,
                record: ForwardRecord | None = None):
        """Returns (search tokens (B, n_s, C), full TokenBatch)."""
        t = templates.shape[1]
        tpl = self.embed_templates(templates)
        srch = self.embed_search(search)
        tpl, srch = self.pos.add_to(tpl, srch, t)
        extra = 0
        if self.cfg.use_reg_token:
            srch = self._append_reg(srch)
            extra = 1
        tpl, srch = self.forward_tokens(tpl, srch, t, asymmetric, record)
        batch = TokenBatch.join(tpl, srch, t, self.template_grid, self.search_grid, extra)
        n_s = self.search_grid[0] * self.search_grid[1]
        return narrow(srch, -2, 0, n_s), batch

    def __call__(self, templates, search, **kw):
        return self.forward(templates, search, **kw)

    # asymmetric-inference caching

    def build_template_cache(self, templates: Tensor) -> TemplateCache:
        t = templates.shape[1]
        tpl = self.embed_templates(templates)
        tpl, _ = self.pos.add_to(tpl, None, t)
        caches = []
        for block in self.blocks:
            tpl, entry = block.template_pass(tpl)
            caches.append(entry)
        return TemplateCache(caches, self.norm_f(tpl).detach(), t)

    def forward_cached(self, search: Tensor, cache: TemplateCache):
        _, srch = self.pos.add_to(None, self.embed_search(search), cache.num_templates)
        extra = 0
        if self.cfg.use_reg_token:
            srch = self._append_reg(srch)
            extra = 1
        for block, entry in zip(self.blocks, cache.blocks):
            srch = block.search_pass(srch, entry)
        srch = self.norm_f(srch)
        batch = TokenBatch.join(cache.final_template_tokens, srch, cache.num_templates,
                                self.template_grid, self.search_grid, extra)
        n_s = self.search_grid[0] * self.search_grid[1]
        return narrow(srch, -2, 0, n_s), batch


# -- hierarchical backbone -----------------------------------------------------------


class _Stage(Module):
    def __init__(self, in_ch: int, spec: StageSpec, rng):
        super().__init__()
        self.spec = spec
        self.embed = Conv2d(in_ch, spec.width, spec.patch_kernel, rng,
                            stride=spec.patch_stride, padding=spec.patch_padding)
        self.blocks = ModuleList(
            ConvMixBlock(spec.width, spec.heads, rng, spec.mlp_ratio) for _ in range(spec.blocks)
        )


class HierarchicalBackbone(Module):
    """Multi-stage backbone: per-stage conv embedding + conv-projection blocks.

    Stage embeddings shrink the grids while widening channels; the final
    search tokens are reshaped back into a 2-D feature map for the head.
    """

    def __init__(self, cfg: BackboneConfig, rng):
        super().__init__()
        if cfg.variant != "hierarchical":
            raise UsageError("HierarchicalBackbone needs a hierarchical config")
        self.cfg = cfg
        self.width = cfg.final_width()
        stages = []
        in_ch = 3
        for spec in cfg.stages:
            stages.append(_Stage(in_ch, spec, rng))
            in_ch = spec.width
        self.stages = ModuleList(stages)
        self.template_grids = cfg.template_grids()
        self.search_grids = cfg.search_grids()
        if cfg.use_reg_token:
            self.reg_token = Tensor(trunc_normal((1, 1, self.width), 0.02, rng), requires_grad=True)

    def _embed_stage(self, stage: _Stage, tpl_maps: Tensor, srch_map: Tensor, batch: int):
        tpl = _grid_to_tokens(stage.embed(tpl_maps), batch)
        srch = _grid_to_tokens(stage.embed(srch_map), batch)
        return tpl, srch

    def _append_reg(self, srch: Tensor) -> Tensor:
        b = srch.shape[0]
        tok = self.reg_token
        if b > 1:
            tok = concat([tok] * b, axis=0)
        return concat([srch, tok], axis=-2)

    def forward(self, templates: Tensor, search: Tensor, asymmetric: bool | None = None,
                record: ForwardRecord | None = None):
        """Returns (final search map (B, C, h, w), final TokenBatch)."""
        asym = self.cfg.asymmetric if asymmetric is None else asymmetric
        b, t = templates.shape[0], templates.shape[1]
        tpl_maps = templates.reshape(b * t, *templates.shape[2:])
        srch_map = search
        layer = 0
        tpl = srch = None
        for si, stage in enumerate(self.stages):
            tgrid, sgrid = self.template_grids[si], self.search_grids[si]
            tpl, srch = self._embed_stage(stage, tpl_maps, srch_map, b)
            extra = 0
            last_stage = si == len(self.stages) - 1
            if last_stage and self.cfg.use_reg_token:
                srch = self._append_reg(srch)
                extra = 1
            batch = TokenBatch.join(tpl, srch, t, tgrid, sgrid, extra)
            for block in stage.blocks:
                rec = record.block if record is not None and record.layer == layer else None
                batch = block(batch, asymmetric=asym, record=rec)
                layer += 1
            tpl, srch = batch.split()
            if not last_stage:
                tpl_maps = _tokens_to_grid(tpl, tgrid, t)
                srch_map = _tokens_to_grid(srch, sgrid, 1)
        sgrid = self.search_grids[-1]
        n_s = sgrid[0] * sgrid[1]
        srch_grid_tokens = narrow(srch, -2, 0, n_s)
        feat = _tokens_to_grid(srch_grid_tokens, sgrid, 1)
        return feat, batch

    def __call__(self, templates, search, **kw):
        return self.forward(templates, search, **kw)

    def build_template_cache(self, templates: Tensor) -> TemplateCache:
        b, t = templates.shape[0], templates.shape[1]
        tpl_maps = templates.reshape(b * t, *templates.shape[2:])
        caches: list[BlockCache] = []
        tpl = None
        for si, stage in enumerate(self.stages):
            tgrid = self.template_grids[si]
            tpl = _grid_to_tokens(stage.embed(tpl_maps), b)
            for block in stage.blocks:
                tpl, entry = block.template_pass(tpl, tgrid, t)
                caches.append(entry)
            if si != len(self.stages) - 1:
                tpl_maps = _tokens_to_grid(tpl, tgrid, t)
        return TemplateCache(caches, tpl.detach(), t)

    def forward_cached(self, search: Tensor, cache: TemplateCache):
        srch_map = search
        srch = None
        layer = 0
        for si, stage in enumerate(self.stages):
            sgrid = self.search_grids[si]
            srch = _grid_to_tokens(stage.embed(srch_map), search.shape[0])
            extra = 0
            if si == len(self.stages) - 1 and self.cfg.use_reg_token:
                srch = self._append_reg(srch)
                extra = 1
            for block in stage.blocks:
                srch = block.search_pass(srch, sgrid, extra, cache.blocks[layer])
                layer += 1
            if si != len(self.stages) - 1:
                srch_map = _tokens_to_grid(srch, sgrid, 1)
        sgrid = self.search_grids[-1]
        n_s = sgrid[0] * sgrid[1]
        batch = TokenBatch.join(cache.final_template_tokens, srch, cache.num_templates,
                                self.template_grids[-1], sgrid,
                                1 if self.cfg.use_reg_token else 0)
        feat = _tokens_to_grid(narrow(srch, -2, 0, n_s), sgrid, 1)
        return feat, batch


def build_backbone(cfg: BackboneConfig, rng):
    if cfg.variant == "plain":
        return PlainBackbone(cfg, rng)
    return HierarchicalBackbone(cfg, rng)


# -- attention-map export --------------------------------------------------------------


ATTENTION_MAP_NAMES = ("search_to_template", "search_to_online", "search_to_search",
                       "online_to_template")


def export_attention_maps(backbone, templates: Tensor, search: Tensor, layer: int, head: int) -> dict:
    """Mean attention mass from a query group to a key group, reshaped to
    the key grid and renormalized within that group.

    Returns search-to-template, search-to-online-template, search-to-search
    and online-template-to-template maps for one layer/head. Needs at least
    two templates for the online maps.
    """
    t = templates.shape[1]
    if t < 2:
        raise UsageError("online-template maps need at least two templates")
    total_blocks = sum(s.blocks for s in backbone.cfg.stages)
    if not (0 <= layer < total_blocks):
        raise UsageError(f"layer {layer} out of range (0..{total_blocks - 1})")
    record = ForwardRecord(layer=layer)
    backbone.forward(templates, search, record=record)
    rec = record.block
    if rec.search is None:
        raise UsageError("forward pass did not reach the requested layer")
    heads = rec.search.shape[1]
    if not (0 <= head < heads):
        raise UsageError(f"head {head} out of range (0..{heads - 1})")

    kt_grid, ks_grid = rec.key_template_grid, rec.key_search_grid
    ntk = kt_grid[0] * kt_grid[1]
    nsk = ks_grid[0] * ks_grid[1]

    def group_map(weights: np.ndarray, q_rows: slice, k_cols: slice, grid) -> np.ndarray:
        w = weights[0, head][q_rows, k_cols]
        w = w / w.sum(axis=1, keepdims=True)
        return w.mean(axis=0).reshape(grid)

    # Query rows are full-resolution tokens; key columns may be down-sampled.
    n_qt = rec.search.shape[2] - rec.extra  # search queries on the grid
    q_tpl_tokens = rec.template.shape[2] // t
    maps = {
        "search_to_template": group_map(rec.search, slice(0, n_qt), slice(0, ntk), kt_grid),
        "search_to_online": group_map(rec.search, slice(0, n_qt), slice(ntk, 2 * ntk), kt_grid),
        "search_to_search": group_map(rec.search, slice(0, n_qt),
                                      slice(t * ntk, t * ntk + nsk), ks_grid),
        "online_to_template": group_map(rec.template, slice(q_tpl_tokens, 2 * q_tpl_tokens),
                                        slice(0, ntk), kt_grid),
    }
    return maps
