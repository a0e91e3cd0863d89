"""Box regression losses: L1, GIoU, CIoU and their weighted combination."""

from __future__ import annotations

from dataclasses import dataclass

from .box import Box
from .tensor import (
    Tensor,
    UsageError,
    absolute,
    arctan,
    as_tensor,
    clamp,
    maximum,
    minimum,
    narrow,
)

import math

# Guard against 0/0 on fully degenerate inputs without perturbing any
# non-degenerate value (maximum() is exact once the operand exceeds it).
_TINY = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Weights of the combined localization loss: total = l1 * L1 + iou * IoU-loss."""

    lambda_l1: float = 5.0
    lambda_iou: float = 2.0
    iou_kind: str = "giou"  # "giou" | "ciou"

    def __post_init__(self):
        if self.lambda_l1 <= 0 or self.lambda_iou <= 0:
            raise UsageError("loss weights must be positive")
        if self.iou_kind not in ("giou", "ciou"):
            raise UsageError(f"unknown iou loss kind {self.iou_kind!r}")


def _coerce(b) -> Tensor:
    if isinstance(b, Box):
        return Tensor(b.as_array())
    return as_tensor(b)


def _coords(b: Tensor):
    return (narrow(b, -1, 0, 1), narrow(b, -1, 1, 1), narrow(b, -1, 2, 1), narrow(b, -1, 3, 1))


def l1_box_loss(pred, gt) -> Tensor:
    """Mean absolute difference over the four normalized coordinates."""
    pred, gt = _coerce(pred), _coerce(gt)
    return absolute(pred - gt).mean()


def _iou_terms(pred: Tensor, gt: Tensor):
    px0, py0, px1, py1 = _coords(pred)
    gx0, gy0, gx1, gy1 = _coords(gt)
    inter_w = clamp(minimum(px1, gx1) - maximum(px0, gx0), lo=0.0)
    inter_h = clamp(minimum(py1, gy1) - maximum(py0, gy0), lo=0.0)
    inter = inter_w * inter_h
    area_p = clamp(px1 - px0, lo=0.0) * clamp(py1 - py0, lo=0.0)
    area_g = clamp(gx1 - gx0, lo=0.0) * clamp(gy1 - gy0, lo=0.0)
    union = area_p + area_g - inter
    iou = inter / maximum(union, _TINY)
    enc_w = maximum(px1, gx1) - minimum(px0, gx0)
    enc_h = maximum(py1, gy1) - minimum(py0, gy0)
    enclosure = enc_w * enc_h
    return iou, union, enclosure, (px0, py0, px1, py1), (gx0, gy0, gx1, gy1)


def giou_loss(pred, gt) -> Tensor:
    """1 - GIoU with GIoU = IoU - (enclosure - union) / enclosure."""
    pred, gt = _coerce(pred), _coerce(gt)
    iou, union, enclosure, _, _ = _iou_terms(pred, gt)
    giou = iou - (enclosure - union) / maximum(enclosure, _TINY)
    return (1.0 - giou).mean()


def ciou_loss(pred, gt) -> Tensor:
    """1 - IoU + center-distance ratio + aspect-consistency term.

    The aspect weight alpha = v / ((1 - IoU) + v) is treated as a constant
    in the backward pass, per the canonical formulation.
    """
    pred, gt = _coerce(pred), _coerce(gt)
    iou, _, _, p, g = _iou_terms(pred, gt)
    px0, py0, px1, py1 = p
    gx0, gy0, gx1, gy1 = g
    pcx, pcy = (px0 + px1) * 0.5, (py0 + py1) * 0.5
    gcx, gcy = (gx0 + gx1) * 0.5, (gy0 + gy1) * 0.5
    rho2 = (pcx - gcx) ** 2.0 + (pcy - gcy) ** 2.0
    enc_w = maximum(px1, gx1) - minimum(px0, gx0)
    enc_h = maximum(py1, gy1) - minimum(py0, gy0)
    c2 = enc_w**2.0 + enc_h**2.0
    pw, ph = clamp(px1 - px0, lo=_TINY), clamp(py1 - py0, lo=_TINY)
    gw, gh = clamp(gx1 - gx0, lo=_TINY), clamp(gy1 - gy0, lo=_TINY)
    v = (4.0 / math.pi**2) * (arctan(gw / gh) - arctan(pw / ph)) ** 2.0
    alpha = (v / maximum((1.0 - iou) + v, _TINY)).detach()
    loss = 1.0 - iou + rho2 / maximum(c2, _TINY) + alpha * v
    return loss.mean()


def combined_loc_loss(pred, gt, weights: LossWeights = LossWeights()) -> Tensor:
    """lambda_l1 * L1 + lambda_iou * (GIoU or CIoU loss)."""
    iou_term = giou_loss(pred, gt) if weights.iou_kind == "giou" else ciou_loss(pred, gt)
    return weights.lambda_l1 * l1_box_loss(pred, gt) + weights.lambda_iou * iou_term
