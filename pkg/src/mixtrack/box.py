"""Axis-aligned boxes in normalized corner form (x0, y0, x1, y1)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    """Corners normalized to [0, 1] of the reference crop or frame."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return max(0.0, self.width) * max(0.0, self.height)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def as_array(self) -> np.ndarray:
        return np.array([self.x0, self.y0, self.x1, self.y1], dtype=np.float64)

    @staticmethod
    def from_array(a) -> "Box":
        a = np.asarray(a, dtype=np.float64).reshape(4)
        return Box(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    @staticmethod
    def from_cxcywh(cx: float, cy: float, w: float, h: float) -> "Box":
        return Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)

    def scaled(self, sx: float, sy: float) -> "Box":
        return Box(self.x0 * sx, self.y0 * sy, self.x1 * sx, self.y1 * sy)

    def is_valid(self) -> bool:
        return 0.0 <= self.x0 <= self.x1 <= 1.0 and 0.0 <= self.y0 <= self.y1 <= 1.0

    def sanitized(self, min_size: float = 0.0) -> "Box":
        """Order corners, clip into [0,1] and enforce a minimum extent
        (one pixel of the reference resolution), shifting inward if the
        expansion would cross a border."""
        x0, x1 = sorted((self.x0, self.x1))
        y0, y1 = sorted((self.y0, self.y1))
        x0, x1 = max(0.0, min(1.0, x0)), max(0.0, min(1.0, x1))
        y0, y1 = max(0.0, min(1.0, y0)), max(0.0, min(1.0, y1))

        def grow(lo, hi):
            if hi - lo >= min_size:
                return lo, hi
            c = 0.5 * (lo + hi)
            half = min_size / 2
            lo, hi = c - half, c + half
            if lo < 0.0:
                lo, hi = 0.0, min(1.0, min_size)
            elif hi > 1.0:
                lo, hi = max(0.0, 1.0 - min_size), 1.0
            return lo, hi

        x0, x1 = grow(x0, x1)
        y0, y1 = grow(y0, y1)
        return Box(x0, y0, x1, y1)


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union
