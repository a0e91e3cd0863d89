"""Score prediction: how likely the tracked crop still contains the target.

A learnable score token cross-attends the ROI features of the current
prediction, then the static template's backbone tokens, and a small MLP
with a sigmoid turns the result into a confidence in (0, 1). The score
gates online template updates at inference.
"""

from __future__ import annotations

import numpy as np

from .attention import merge_heads, scaled_attention, split_heads
from .box import Box
from .nn import LayerNorm, Linear, Mlp, Module, trunc_normal
from .tensor import (
    DimensionError,
    NumericError,
    Tensor,
    as_tensor,
    concat,
    matmul,
    relu,
    sigmoid,
    transpose,
)


def _sample_matrix(lo: float, hi: float, points: int, extent: int) -> np.ndarray:
    """Interpolation weights for `points` align-corners samples spanning
    [lo, hi] in normalized coordinates of an axis with `extent` cells."""
    if points < 1:
        raise DimensionError("roi grid must be positive")
    pos = np.linspace(lo, hi, points) if points > 1 else np.array([(lo + hi) / 2.0])
    pos = np.clip(pos, 0.0, 1.0) * (extent - 1)
    i0 = np.clip(np.floor(pos).astype(np.int64), 0, extent - 1)
    i1 = np.minimum(i0 + 1, extent - 1)
    frac = pos - i0
    m = np.zeros((points, extent))
    np.add.at(m, (np.arange(points), i0), 1.0 - frac)
    np.add.at(m, (np.arange(points), i1), frac)
    return m


def roi_pool(feat: Tensor, box: Box, grid: int = 8) -> Tensor:
    """Bilinearly sample a (C, H, W) feature map on a grid x grid lattice
    spanning the box interior (corners of the lattice hit the box corners).

    Returns (grid*grid, C) tokens in row-major order. The box is treated
    as a constant; gradients flow to the features only.
    """
    feat = as_tensor(feat)
    if feat.ndim != 3:
        raise DimensionError("roi_pool expects (C, H, W) features")
    _, h, w = feat.shape
    min_size = 1.0 / max(h - 1, w - 1, 1)
    box = box.sanitized(min_size=min_size)
    sy = Tensor(_sample_matrix(box.y0, box.y1, grid, h))
    sx = Tensor(_sample_matrix(box.x0, box.x1, grid, w))
    pooled = matmul(matmul(sy, feat), transpose(sx, (1, 0)))  # (C, g, g)
    c = feat.shape[0]
    return transpose(pooled, (1, 2, 0)).reshape(grid * grid, c)


class CrossAttentionBlock(Module):
    """Queries attend a separate key/value sequence; pre-norm + MLP."""

    def __init__(self, dim: int, heads: int, rng, mlp_ratio: int = 4):
        super().__init__()
        self.heads = heads
        self.norm_q = LayerNorm(dim)
        self.norm_kv = LayerNorm(dim)
        self.lin_q = Linear(dim, dim, rng)
        self.lin_k = Linear(dim, dim, rng)
        self.lin_v = Linear(dim, dim, rng)
        self.proj = Linear(dim, dim, rng, zero_init=True)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio * dim, rng)

    def __call__(self, queries: Tensor, keys: Tensor) -> Tensor:
        q = split_heads(self.lin_q(self.norm_q(queries)), self.heads)
        kn = self.norm_kv(keys)
        k = split_heads(self.lin_k(kn), self.heads)
        v = split_heads(self.lin_v(kn), self.heads)
        att = scaled_attention(q, k, v)
        x = queries + self.proj(merge_heads(att))
        return x + self.mlp(self.norm2(x))


class ScorePredictor(Module):
    """Two cross-attention hops (ROI, then static template) plus an MLP."""

    def __init__(self, width: int, rng, heads: int = 4, roi_grid: int = 8):
        super().__init__()
        self.width = width
        self.roi_grid = roi_grid
        self.score_token = Tensor(trunc_normal((1, 1, width), 0.02, rng), requires_grad=True)
        self.roi_block = CrossAttentionBlock(width, heads, rng)
        self.template_block = CrossAttentionBlock(width, heads, rng)
        self.fc1 = Linear(width, width, rng)
        self.fc2 = Linear(width, width, rng)
        self.fc3 = Linear(width, 1, rng)

    def __call__(self, roi_tokens: Tensor, template_tokens: Tensor) -> Tensor:
        """(B, n_roi, C) x (B, n_t, C) -> (B,) scores in (0, 1)."""
        if roi_tokens.ndim != 3 or template_tokens.ndim != 3:
            raise DimensionError("score inputs must be (B, n, C)")
        if roi_tokens.shape[-1] != self.width or template_tokens.shape[-1] != self.width:
            raise DimensionError("score input width mismatch")
        b = roi_tokens.shape[0]
        token = self.score_token
        if b > 1:
            token = concat([token] * b, axis=0)
        token = self.roi_block(token, roi_tokens)
        token = self.template_block(token, template_tokens)
        token = token.reshape(b, self.width)
        logit = self.fc3(relu(self.fc2(relu(self.fc1(token)))))
        return sigmoid(logit).reshape(b)


def score_loss(p: Tensor, labels) -> Tensor:
    """Binary cross-entropy -[y log p + (1-y) log(1-p)], averaged.

    ``p`` must lie strictly inside (0, 1); a sigmoid output satisfies this
    unless it saturated, which is reported as a numeric error.
    """
    p = as_tensor(p)
    y = np.asarray(labels, dtype=p.data.dtype).reshape(p.shape)
    if np.any(p.data <= 0.0) or np.any(p.data >= 1.0):
        raise NumericError("score probabilities must be strictly inside (0, 1)")
    from .tensor import log

    losses = -(Tensor(y) * log(p) + Tensor(1.0 - y) * log(1.0 - p))
    return losses.mean()
