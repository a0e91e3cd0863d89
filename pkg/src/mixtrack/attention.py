"""Mixed attention over concatenated template and search token groups.

One attention call fuses feature extraction and template/search
communication: queries from each group attend over the concatenated keys
of both groups, so self- and cross-attention happen in a single softmax.
The asymmetric variant prunes the template-to-search direction, which
makes every template activation independent of the search content and
therefore reusable across frames.

Template and search groups are always projected and normalized by
separate op calls, never as one fused sequence. That keeps cached
template passes bit-identical to full recomputation instead of merely
close.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import Conv2d, LayerNorm, Linear, Mlp, Module
from .tensor import DimensionError, Tensor, UsageError, concat, matmul, narrow, softmax_lastdim, transpose


@dataclass
class TokenBatch:
    """Concatenated template + search tokens with split metadata.

    Layout along the token axis: ``T`` template grids first, then the
    search grid, then ``extra`` trailing non-grid tokens (the regression
    token, when a query head is attached).
    """

    tokens: Tensor                 # (B, L, C)
    num_templates: int             # T
    template_grid: tuple[int, int]
    search_grid: tuple[int, int]
    extra: int = 0

    def __post_init__(self):
        if self.tokens.ndim != 3:
            raise DimensionError("TokenBatch tokens must be (B, L, C)")
        if self.tokens.shape[-2] != self.total_tokens:
            raise DimensionError(
                f"token count {self.tokens.shape[-2]} != "
                f"{self.num_templates}x{self.tokens_per_template} + {self.num_search} + {self.extra}"
            )

    @property
    def tokens_per_template(self) -> int:
        h, w = self.template_grid
        return h * w

    @property
    def num_search(self) -> int:
        h, w = self.search_grid
        return h * w

    @property
    def total_tokens(self) -> int:
        return self.num_templates * self.tokens_per_template + self.num_search + self.extra

    @property
    def channels(self) -> int:
        return self.tokens.shape[-1]

    def split(self) -> tuple[Tensor, Tensor]:
        """(template tokens, search tokens incl. trailing extras)."""
        n_t = self.num_templates * self.tokens_per_template
        tpl = narrow(self.tokens, -2, 0, n_t)
        rest = narrow(self.tokens, -2, n_t, self.num_search + self.extra)
        return tpl, rest

    def with_tokens(self, tokens: Tensor) -> "TokenBatch":
        return TokenBatch(tokens, self.num_templates, self.template_grid, self.search_grid, self.extra)

    @staticmethod
    def join(tpl: Tensor, rest: Tensor, num_templates: int, template_grid, search_grid,
             extra: int = 0) -> "TokenBatch":
        return TokenBatch(concat([tpl, rest], axis=-2), num_templates, template_grid, search_grid, extra)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(B, n, C) -> (B, heads, n, C/heads)."""
    b, n, c = x.shape
    if c % heads:
        raise DimensionError(f"width {c} not divisible into {heads} heads")
    return transpose(x.reshape(b, n, heads, c // heads), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    """(B, heads, n, d) -> (B, n, heads*d)."""
    b, h, n, d = x.shape
    return transpose(x, (0, 2, 1, 3)).reshape(b, n, h * d)


@dataclass
class AttentionInputs:
    """Per-head queries/keys/values for the two token groups."""

    q_t: Tensor
    k_t: Tensor
    v_t: Tensor
    q_s: Tensor
    k_s: Tensor
    v_s: Tensor

    def __post_init__(self):
        d = self.q_t.shape[-1]
        for name in ("k_t", "v_t", "q_s", "k_s", "v_s"):
            if getattr(self, name).shape[-1] != d:
                raise DimensionError(f"per-head dim mismatch on {name}")
        if self.q_t.shape[:2] != self.q_s.shape[:2]:
            raise DimensionError("head/batch mismatch between groups")


def scaled_attention(q: Tensor, k: Tensor, v: Tensor, record_to=None, record_key=None) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over (B, heads, n, d) operands."""
    d = q.shape[-1]
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(d))
    weights = softmax_lastdim(scores)
    if record_to is not None:
        record_to[record_key] = weights.data.copy()
    return matmul(weights, v)


def mixed_attention(inp: AttentionInputs, asymmetric: bool = False, record_to=None):
    """Dual attention over the concatenated key/value groups.

    Full form: both query groups attend over k_m = [k_t, k_s]. Asymmetric
    form: template queries attend only over template keys (all templates
    jointly), search queries are unchanged.
    """
    k_m = concat([inp.k_t, inp.k_s], axis=-2)
    v_m = concat([inp.v_t, inp.v_s], axis=-2)
    if asymmetric:
        att_t = scaled_attention(inp.q_t, inp.k_t, inp.v_t, record_to, "template")
    else:
        att_t = scaled_attention(inp.q_t, k_m, v_m, record_to, "template")
    att_s = scaled_attention(inp.q_s, k_m, v_m, record_to, "search")
    return att_t, att_s


def attention_score_flops(num_templates: int, tokens_per_template: int, num_search: int,
                          head_dim: int, asymmetric: bool) -> int:
    """Multiply-accumulate count of the score and value products.

    Full mixed attention touches (T*n_t + n_s)^2 score entries; the
    asymmetric form only (T*n_t)^2 + n_s*(T*n_t + n_s). Each entry costs
    d MACs for the score product and d for the value product.
    """
    if min(num_templates, head_dim) <= 0 or tokens_per_template < 0 or num_search < 0:
        raise UsageError("attention_score_flops needs positive sizes")
    n_t = num_templates * tokens_per_template
    total = n_t + num_search
    if asymmetric:
        entries = n_t * n_t + num_search * total
    else:
        entries = total * total
    return 2 * head_dim * entries


def attention_score_entries(num_templates: int, tokens_per_template: int, num_search: int,
                            asymmetric: bool) -> int:
    """Score-matrix entry count alone (the d-independent part of the cost)."""
    return attention_score_flops(num_templates, tokens_per_template, num_search, 1, asymmetric) // 2


@dataclass
class BlockCache:
    """Frozen per-block template state for asymmetric inference."""

    k_t: Tensor
    v_t: Tensor


@dataclass
class BlockRecord:
    """Attention weights captured from one block for map export."""

    template: np.ndarray | None = None  # (B, H, n_qt, n_k)
    search: np.ndarray | None = None    # (B, H, n_qs, n_k)
    key_template_grid: tuple[int, int] = (0, 0)
    key_search_grid: tuple[int, int] = (0, 0)
    num_templates: int = 0
    extra: int = 0
    asymmetric: bool = False


class SlimMixBlock(Module):
    """Pre-norm mixed-attention block with plain linear projections.

    Used by the non-hierarchical backbone; also the masked-pretraining
    decoder block. Extra (non-grid) tokens ride in the search group.
    """

    def __init__(self, dim: int, heads: int, rng, mlp_ratio: int = 4):
        super().__init__()
        if dim % heads:
            raise DimensionError("width must divide into heads")
        self.dim = dim
        self.heads = heads
        self.norm1 = LayerNorm(dim)
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng, zero_init=True)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio * dim, rng)

    def _project(self, x: Tensor):
        y = self.qkv(self.norm1(x))
        q = split_heads(narrow(y, -1, 0, self.dim), self.heads)
        k = split_heads(narrow(y, -1, self.dim, self.dim), self.heads)
        v = split_heads(narrow(y, -1, 2 * self.dim, self.dim), self.heads)
        return q, k, v

    def _finish(self, x: Tensor, att: Tensor) -> Tensor:
        x = x + self.proj(merge_heads(att))
        return x + self.mlp(self.norm2(x))

    def template_pass(self, tpl: Tensor, record_to=None) -> tuple[Tensor, BlockCache]:
        """Asymmetric template branch: independent of any search content."""
        q, k, v = self._project(tpl)
        att = scaled_attention(q, k, v, record_to, "template")
        return self._finish(tpl, att), BlockCache(k_t=k.detach(), v_t=v.detach())

    def search_pass(self, srch: Tensor, cache: BlockCache, record_to=None) -> Tensor:
        q, k, v = self._project(srch)
        att = scaled_attention(
            q, concat([cache.k_t, k], axis=-2), concat([cache.v_t, v], axis=-2),
            record_to, "search",
        )
        return self._finish(srch, att)

    def forward_parts(self, tpl: Tensor, srch: Tensor, asymmetric: bool, record_to=None):
        if asymmetric:
            tpl_out, cache = self.template_pass(tpl, record_to)
            return tpl_out, self.search_pass(srch, cache, record_to)
        tq, tk, tv = self._project(tpl)
        sq, sk, sv = self._project(srch)
        att_t, att_s = mixed_attention(
            AttentionInputs(tq, tk, tv, sq, sk, sv), asymmetric=False, record_to=record_to
        )
        return self._finish(tpl, att_t), self._finish(srch, att_s)

    def __call__(self, batch: TokenBatch, asymmetric: bool = False, record: BlockRecord | None = None) -> TokenBatch:
        tpl, srch = batch.split()
        record_to = {} if record is not None else None
        tpl_out, srch_out = self.forward_parts(tpl, srch, asymmetric, record_to)
        if record is not None:
            record.template = record_to.get("template")
            record.search = record_to.get("search")
            record.key_template_grid = batch.template_grid
            record.key_search_grid = batch.search_grid
            record.num_templates = batch.num_templates
            record.extra = batch.extra
            record.asymmetric = asymmetric
        return TokenBatch.join(
            tpl_out, srch_out, batch.num_templates, batch.template_grid, batch.search_grid, batch.extra
        )


def _tokens_to_grid(x: Tensor, grid: tuple[int, int], fold: int) -> Tensor:
    """(B, fold*h*w, C) -> (B*fold, C, h, w) keeping row-major token order."""
    b, _, c = x.shape
    h, w = grid
    return transpose(x.reshape(b * fold, h, w, c), (0, 3, 1, 2))


def _grid_to_tokens(x: Tensor, batch: int) -> Tensor:
    """(B*fold, C, h, w) -> (B, fold*h*w, C)."""
    bf, c, h, w = x.shape
    y = transpose(x, (0, 2, 3, 1)).reshape(batch, (bf // batch) * h * w, c)
    return y


class ConvMixBlock(Module):
    """Mixed-attention block with separable depth-wise conv projections.

    Each group is reshaped to its 2-D grids; a depth-wise 3x3 convolution
    (stride 1 for queries, stride 2 for keys/values) models local context
    and down-samples the key/value maps, then a pointwise linear completes
    the separable projection. Used by the hierarchical backbone.
    """

    def __init__(self, dim: int, heads: int, rng, mlp_ratio: int = 4,
                 kv_stride: int = 2):
        super().__init__()
        if dim % heads:
            raise DimensionError("width must divide into heads")
        self.dim = dim
        self.heads = heads
        self.kv_stride = kv_stride
        self.norm1 = LayerNorm(dim)
        self.conv_q = Conv2d(dim, dim, 3, rng, stride=1, padding=1, groups=dim, bias=False)
        self.conv_k = Conv2d(dim, dim, 3, rng, stride=kv_stride, padding=1, groups=dim, bias=False)
        self.conv_v = Conv2d(dim, dim, 3, rng, stride=kv_stride, padding=1, groups=dim, bias=False)
        self.lin_q = Linear(dim, dim, rng)
        self.lin_k = Linear(dim, dim, rng)
        self.lin_v = Linear(dim, dim, rng)
        self.proj = Linear(dim, dim, rng, zero_init=True)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio * dim, rng)

    def kv_grid(self, grid: tuple[int, int]) -> tuple[int, int]:
        s = self.kv_stride
        return ((grid[0] + 2 - 3) // s + 1, (grid[1] + 2 - 3) // s + 1)

    def _project_grid(self, x: Tensor, grid: tuple[int, int], fold: int, extra: Tensor | None = None):
        """Project one group; extra tokens bypass the spatial convolutions."""
        b = x.shape[0]
        xn = self.norm1(x)
        gmap = _tokens_to_grid(xn, grid, fold)
        q = self.lin_q(_grid_to_tokens(self.conv_q(gmap), b))
        k = self.lin_k(_grid_to_tokens(self.conv_k(gmap), b))
        v = self.lin_v(_grid_to_tokens(self.conv_v(gmap), b))
        if extra is not None:
            en = self.norm1(extra)
            q = concat([q, self.lin_q(en)], axis=-2)
            k = concat([k, self.lin_k(en)], axis=-2)
            v = concat([v, self.lin_v(en)], axis=-2)
        return (split_heads(q, self.heads), split_heads(k, self.heads), split_heads(v, self.heads))

    def _finish(self, x: Tensor, att: Tensor) -> Tensor:
        x = x + self.proj(merge_heads(att))
        return x + self.mlp(self.norm2(x))

    def template_pass(self, tpl: Tensor, template_grid, num_templates: int, record_to=None):
        q, k, v = self._project_grid(tpl, template_grid, num_templates)
        att = scaled_attention(q, k, v, record_to, "template")
        return self._finish(tpl, att), BlockCache(k_t=k.detach(), v_t=v.detach())

    def search_pass(self, srch: Tensor, search_grid, extra: int, cache: BlockCache, record_to=None):
        grid_part = srch if extra == 0 else narrow(srch, -2, 0, srch.shape[-2] - extra)
        extra_part = None if extra == 0 else narrow(srch, -2, srch.shape[-2] - extra, extra)
        q, k, v = self._project_grid(grid_part, search_grid, 1, extra_part)
        att = scaled_attention(
            q, concat([cache.k_t, k], axis=-2), concat([cache.v_t, v], axis=-2),
            record_to, "search",
        )
        return self._finish(srch, att)

    def __call__(self, batch: TokenBatch, asymmetric: bool = False, record: BlockRecord | None = None) -> TokenBatch:
        tpl, srch = batch.split()
        record_to = {} if record is not None else None
        if asymmetric:
            tpl_out, cache = self.template_pass(tpl, batch.template_grid, batch.num_templates, record_to)
            srch_out = self.search_pass(srch, batch.search_grid, batch.extra, cache, record_to)
        else:
            tq, tk, tv = self._project_grid(tpl, batch.template_grid, batch.num_templates)
            grid_part = srch if batch.extra == 0 else narrow(srch, -2, 0, batch.num_search)
            extra_part = None if batch.extra == 0 else narrow(srch, -2, batch.num_search, batch.extra)
            sq, sk, sv = self._project_grid(grid_part, batch.search_grid, 1, extra_part)
            att_t, att_s = mixed_attention(
                AttentionInputs(tq, tk, tv, sq, sk, sv), asymmetric=False, record_to=record_to
            )
            tpl_out = self._finish(tpl, att_t)
            srch_out = self._finish(srch, att_s)
        if record is not None:
            record.template = record_to.get("template")
            record.search = record_to.get("search")
            record.key_template_grid = self.kv_grid(batch.template_grid)
            record.key_search_grid = self.kv_grid(batch.search_grid)
            record.num_templates = batch.num_templates
            record.extra = batch.extra
            record.asymmetric = asymmetric
        return TokenBatch.join(
            tpl_out, srch_out, batch.num_templates, batch.template_grid, batch.search_grid, batch.extra
        )
