"""Localization heads: plain corner, pyramidal corner, and query-token.

Corner heads predict per-pixel probability maps for the top-left and
bottom-right corners; the box is the spatial expectation of each map.
The query head regresses coordinates from a learnable token appended to
the final-stage sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import TokenBatch
from .nn import Conv2d, ConvNormAct, Linear, Module, ModuleList
from .tensor import (
    DimensionError,
    Tensor,
    UsageError,
    bilinear_resize,
    clamp,
    concat,
    maximum,
    narrow,
    relu,
    sigmoid,
    softmax_lastdim,
)

HEAD_KINDS = ("corner", "pyramid", "query")


@dataclass
class CornerMaps:
    """Per-pixel corner probabilities; each map sums to one."""

    tl: Tensor  # (B, H, W)
    br: Tensor


def _coord_row(n: int) -> np.ndarray:
    # index i maps to i/(n-1); a single cell maps to 0 by convention
    if n == 1:
        return np.zeros(1)
    return np.linspace(0.0, 1.0, n)


def soft_argmax(prob: Tensor) -> tuple[Tensor, Tensor]:
    """Expected (x, y) of probability maps (..., H, W), in [0, 1]."""
    h, w = prob.shape[-2], prob.shape[-1]
    xs = Tensor(_coord_row(w))
    ys = Tensor(_coord_row(h).reshape(h, 1))
    x = (prob * xs).sum(axis=(-2, -1))
    y = (prob * ys).sum(axis=(-2, -1))
    return x, y


def _stack_last(parts: list[Tensor]) -> Tensor:
    return concat([p.reshape(p.shape + (1,)) for p in parts], axis=-1)


def _spatial_softmax(logits: Tensor) -> Tensor:
    """(B, 1, H, W) logits -> (B, H, W) probabilities."""
    b, _, h, w = logits.shape
    flat = softmax_lastdim(logits.reshape(b, h * w))
    return flat.reshape(b, h, w)


class _CornerBranch(Module):
    """Channel-halving conv-norm-ReLU stack ending in a one-channel logit map."""

    def __init__(self, in_ch: int, rng, depth: int = 4, norm: str = "group"):
        super().__init__()
        layers = []
        c = in_ch
        for _ in range(depth):
            nxt = max(1, c // 2)
            layers.append(ConvNormAct(c, nxt, rng, norm=norm))
            c = nxt
        self.stack = ModuleList(layers)
        self.out = Conv2d(c, 1, 3, rng, padding=1)
        self.out.weight.data[:] = 0.0

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.stack:
            x = layer(x)
        return self.out(x)


def _boxes_from_maps(tl: Tensor, br: Tensor) -> Tensor:
    x0, y0 = soft_argmax(tl)
    x1, y1 = soft_argmax(br)
    # keep corner ordering by clamping rather than swapping
    x1 = maximum(x1, x0)
    y1 = maximum(y1, y0)
    return _stack_last([x0, y0, x1, y1])


class PlainCornerHead(Module):
    """Fully-convolutional corner prediction on the search feature map."""

    def __init__(self, in_ch: int, rng, norm: str = "group"):
        super().__init__()
        self.tl_branch = _CornerBranch(in_ch, rng, norm=norm)
        self.br_branch = _CornerBranch(in_ch, rng, norm=norm)

    def __call__(self, feat: Tensor) -> tuple[Tensor, CornerMaps]:
        if feat.ndim != 4:
            raise DimensionError("corner head expects (B, C, H, W) features")
        maps = CornerMaps(
            tl=_spatial_softmax(self.tl_branch(feat)),
            br=_spatial_softmax(self.br_branch(feat)),
        )
        return _boxes_from_maps(maps.tl, maps.br), maps


class PyramidCornerHead(Module):
    """Corner prediction on a three-scale pyramid fused at 2x resolution.

    Branches at H/2 (strided conv), H (plain conv) and 2H (upsample +
    conv) are resized to 2H, summed, fused by one more conv block, and
    fed to corner branches, doubling localization resolution.
    """

    def __init__(self, in_ch: int, rng, norm: str = "group"):
        super().__init__()
        self.down = ConvNormAct(in_ch, in_ch, rng, stride=2, norm=norm)
        self.same = ConvNormAct(in_ch, in_ch, rng, norm=norm)
        self.up = ConvNormAct(in_ch, in_ch, rng, norm=norm)
        self.fuse = ConvNormAct(in_ch, in_ch, rng, norm=norm)
        self.tl_branch = _CornerBranch(in_ch, rng, norm=norm)
        self.br_branch = _CornerBranch(in_ch, rng, norm=norm)

    def __call__(self, feat: Tensor) -> tuple[Tensor, CornerMaps]:
        if feat.ndim != 4:
            raise DimensionError("corner head expects (B, C, H, W) features")
        h, w = feat.shape[-2], feat.shape[-1]
        if h < 2 or w < 2:
            raise DimensionError("pyramid head needs at least a 2x2 feature map")
        coarse = self.down(feat)
        mid = self.same(feat)
        fine = self.up(bilinear_resize(feat, 2 * h, 2 * w))
        fused = (
            bilinear_resize(coarse, 2 * h, 2 * w)
            + bilinear_resize(mid, 2 * h, 2 * w)
            + fine
        )
        fused = self.fuse(fused)
        maps = CornerMaps(
            tl=_spatial_softmax(self.tl_branch(fused)),
            br=_spatial_softmax(self.br_branch(fused)),
        )
        return _boxes_from_maps(maps.tl, maps.br), maps


class QueryHead(Module):
    """Three-layer feed-forward regression from the learnable token."""

    def __init__(self, width: int, rng):
        super().__init__()
        self.fc1 = Linear(width, width, rng)
        self.fc2 = Linear(width, width, rng)
        self.fc3 = Linear(width, 4, rng)

    def __call__(self, batch: TokenBatch) -> Tensor:
        if batch.extra < 1:
            raise UsageError("query head needs the regression token appended to the sequence")
        token = narrow(batch.tokens, -2, batch.total_tokens - 1, 1)  # (B, 1, C)
        token = token.reshape(token.shape[0], token.shape[-1])
        out = sigmoid(self.fc3(relu(self.fc2(relu(self.fc1(token))))))  # (B, 4) cx cy w h
        cx = narrow(out, -1, 0, 1)
        cy = narrow(out, -1, 1, 1)
        w = narrow(out, -1, 2, 1)
        h = narrow(out, -1, 3, 1)
        x0 = clamp(cx - w * 0.5, 0.0, 1.0)
        y0 = clamp(cy - h * 0.5, 0.0, 1.0)
        x1 = clamp(cx + w * 0.5, 0.0, 1.0)
        y1 = clamp(cy + h * 0.5, 0.0, 1.0)
        return concat([x0, y0, x1, y1], axis=-1)
