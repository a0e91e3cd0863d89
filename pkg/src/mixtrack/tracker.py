"""Online inference: crop geometry, per-frame prediction, template updates.

Frames are (3, H, W) pixel arrays (uint8 or floats in [0, 1]); boxes are
normalized to the frame. Each step crops a search region around the last
prediction, runs the model, maps the predicted box back to frame space,
scores the new candidate crop, and advances the interval-based template
update state machine.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .box import Box
from .model import ModelConfig, TrackModel, images_to_tensor
from .score import ScorePredictor, roi_pool
from .tensor import Tensor, UsageError, narrow, no_grad


@dataclass(frozen=True)
class TrackerConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    template_factor: float = 2.0
    search_factor: float = 5.0
    update_interval: int = 200
    score_threshold: float = 0.5
    online_templates: int = 1
    gate_updates: bool = True   # False = install the latest candidate every interval

    def __post_init__(self):
        if self.template_factor <= 1.0 or self.search_factor <= 1.0:
            raise UsageError("crop factors must exceed 1")
        if self.update_interval < 1:
            raise UsageError("update interval must be at least 1")
        if not 0.0 < self.score_threshold < 1.0:
            raise UsageError("score threshold must lie inside (0, 1)")


@dataclass(frozen=True)
class CropMapping:
    """Affine between a square frame window and its resampled crop."""

    x0: float          # frame-pixel left edge of the window
    y0: float
    side: float        # window side, frame pixels
    out_size: int
    frame_w: int
    frame_h: int
    clamped: bool = False

    def box_to_frame(self, box: Box) -> Box:
        """Crop-normalized box -> frame-normalized box."""
        return Box(
            (self.x0 + box.x0 * self.side) / self.frame_w,
            (self.y0 + box.y0 * self.side) / self.frame_h,
            (self.x0 + box.x1 * self.side) / self.frame_w,
            (self.y0 + box.y1 * self.side) / self.frame_h,
        )

    def box_to_crop(self, box: Box) -> Box:
        """Frame-normalized box -> crop-normalized box."""
        return Box(
            (box.x0 * self.frame_w - self.x0) / self.side,
            (box.y0 * self.frame_h - self.y0) / self.side,
            (box.x1 * self.frame_w - self.x0) / self.side,
            (box.y1 * self.frame_h - self.y0) / self.side,
        )


def map_box_to_frame(box: Box, mapping: CropMapping) -> Box:
    """Inverse crop transform, clamped to the frame."""
    out = mapping.box_to_frame(box)
    min_size = 1.0 / max(mapping.frame_w, mapping.frame_h)
    return out.sanitized(min_size=min_size)


def _as_float_frame(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.dtype == np.uint8:
        return frame.astype(np.float64) / 255.0
    return frame.astype(np.float64, copy=False)


def crop_region(frame: np.ndarray, box: Box, factor: float, out_size: int):
    """Square crop of side factor * sqrt(w*h) centered on the box, resampled
    to out_size; out-of-frame area takes the frame's mean color.

    Returns (crop (3, out, out) float64 in [0,1], CropMapping).
    """
    frame = _as_float_frame(frame)
    _, fh, fw = frame.shape
    w_px = box.width * fw
    h_px = box.height * fh
    if w_px <= 0 or h_px <= 0:
        raise UsageError("crop_region needs a box with positive area")
    side = max(2.0, factor * float(np.sqrt(w_px * h_px)))
    cx = 0.5 * (box.x0 + box.x1) * fw
    cy = 0.5 * (box.y0 + box.y1) * fh
    clamped = not (0.0 <= cx <= fw and 0.0 <= cy <= fh)
    cx, cy = min(max(cx, 0.0), float(fw)), min(max(cy, 0.0), float(fh))
    x0 = cx - side / 2.0
    y0 = cy - side / 2.0

    # sample at output-pixel centers; continuous point p sits at index p - 0.5
    us = x0 + (np.arange(out_size) + 0.5) * side / out_size - 0.5
    vs = y0 + (np.arange(out_size) + 0.5) * side / out_size - 0.5
    fill = frame.mean(axis=(1, 2))
    crop = _bilinear_gather(frame, vs, us, fill)
    return crop, CropMapping(x0, y0, side, out_size, fw, fh, clamped)


def _bilinear_gather(frame: np.ndarray, ys: np.ndarray, xs: np.ndarray, fill: np.ndarray):
    """Sample frame (3, H, W) at the ys x xs index lattice; out-of-range
    points blend toward the fill color."""
    _, fh, fw = frame.shape
    yy = ys[:, None]
    xx = xs[None, :]
    y0 = np.floor(yy).astype(np.int64)
    x0 = np.floor(xx).astype(np.int64)
    out = np.zeros((3, ys.size, xs.size))
    for dy in (0, 1):
        for dx in (0, 1):
            iy = y0 + dy
            ix = x0 + dx
            wy = 1.0 - np.abs(yy - iy)
            wx = 1.0 - np.abs(xx - ix)
            wgt = wy * wx
            inside = (iy >= 0) & (iy < fh) & (ix >= 0) & (ix < fw)
            iyc = np.clip(iy, 0, fh - 1)
            ixc = np.clip(ix, 0, fw - 1)
            vals = frame[:, iyc.repeat(xs.size, axis=1), np.broadcast_to(ixc, (ys.size, xs.size))]
            vals = np.where(inside, vals, fill[:, None, None])
            out += wgt * vals
    return out


class IntervalGate:
    """Buffer the best-scoring candidate; release it when the interval ends.

    feed() returns the candidate to install, or None. Ties keep the
    earliest candidate; a buffered score below the threshold releases
    nothing. With gating off, the most recent candidate is installed at
    every interval boundary unconditionally.
    """

    def __init__(self, interval: int, threshold: float, gated: bool = True):
        self.interval = interval
        self.threshold = threshold
        self.gated = gated
        self.counter = 0
        self.best = None
        self.best_score = -1.0

    def feed(self, candidate, score: float):
        self.counter += 1
        if self.gated:
            if score > self.best_score:
                self.best, self.best_score = candidate, score
        else:
            self.best, self.best_score = candidate, score
        installed = None
        if self.counter >= self.interval:
            if not self.gated or self.best_score >= self.threshold:
                installed = self.best
            self.counter = 0
            self.best, self.best_score = None, -1.0
        return installed


@dataclass
class TemplateSet:
    static: np.ndarray                 # (3, h, w) float crop
    online: list = field(default_factory=list)
    online_scores: list = field(default_factory=list)

    def replace_oldest(self, crop: np.ndarray, score: float) -> None:
        self.online.pop(0)
        self.online_scores.pop(0)
        self.online.append(crop)
        self.online_scores.append(score)

    def stacked(self) -> np.ndarray:
        return np.stack([self.static] + list(self.online))[None]  # (1, T, 3, h, w)


class Tracker:
    """One tracked sequence; mutate via init() then step() per frame."""

    def __init__(self, model: TrackModel, cfg: TrackerConfig, spm: ScorePredictor | None = None):
        self.model = model
        self.cfg = cfg
        self.spm = spm
        self.templates: TemplateSet | None = None
        self.prev_box: Box | None = None
        self.gate = IntervalGate(cfg.update_interval, cfg.score_threshold, cfg.gate_updates)
        self._cache = None
        self.model.eval()

    @property
    def _asymmetric(self) -> bool:
        return self.model.cfg.backbone.asymmetric

    def init(self, frame: np.ndarray, box: Box) -> tuple[Box, float]:
        """Frame-0 contract: adopt the ground-truth box with score 1."""
        bcfg = self.model.cfg.backbone
        crop, _ = crop_region(frame, box, self.cfg.template_factor, bcfg.template_size)
        self.templates = TemplateSet(static=crop)
        for _ in range(self.cfg.online_templates):
            self.templates.online.append(crop.copy())
            self.templates.online_scores.append(1.0)
        self.prev_box = box
        self.gate = IntervalGate(self.cfg.update_interval, self.cfg.score_threshold,
                                 self.cfg.gate_updates)
        self._cache = None
        return box, 1.0

    def _model_output(self, search_crop: np.ndarray):
        search = images_to_tensor(search_crop[None])
        if self._asymmetric:
            if self._cache is None:
                self._cache = self.model.build_template_cache(
                    images_to_tensor(self.templates.stacked())
                )
            return self.model.forward_cached(search, self._cache), self._cache
        templates = images_to_tensor(self.templates.stacked())
        return self.model.forward(templates, search), None

    def _score(self, out, box_in_crop: Box, cache) -> float:
        if self.spm is None:
            return 1.0
        feat = narrow(out.search_feat, 0, 0, 1).reshape(out.search_feat.shape[1:])
        roi = roi_pool(feat, box_in_crop, self.spm.roi_grid)
        n_t = out.batch.tokens_per_template
        if cache is not None:
            tpl_tokens = narrow(cache.final_template_tokens, -2, 0, n_t)
        else:
            tpl_tokens, _ = out.batch.split()
            tpl_tokens = narrow(tpl_tokens, -2, 0, n_t)
        score = self.spm(roi.reshape((1,) + roi.shape), tpl_tokens)
        return float(score.data.reshape(-1)[0])

    def step(self, frame: np.ndarray) -> tuple[Box, float]:
        if self.templates is None:
            raise UsageError("tracker must be initialized with init() first")
        bcfg = self.model.cfg.backbone
        search_crop, mapping = crop_region(frame, self.prev_box, self.cfg.search_factor,
                                           bcfg.search_size)
        with no_grad():
            out, cache = self._model_output(search_crop)
            raw = Box.from_array(out.boxes.data[0]).sanitized()
            box = map_box_to_frame(raw, mapping)
            score = self._score(out, raw, cache)
        candidate, _ = crop_region(frame, box, self.cfg.template_factor, bcfg.template_size)
        installed = self.gate.feed((candidate, score), score)
        if installed is not None:
            crop, crop_score = installed
            self.templates.replace_oldest(crop, crop_score)
            self._cache = None
        self.prev_box = box
        return box, score


def track_sequence(model: TrackModel, cfg: TrackerConfig, frames, init_box: Box,
                   spm: ScorePredictor | None = None):
    """Run one pass over a sequence; returns [(box, score)] incl. frame 0."""
    tracker = Tracker(model, cfg, spm)
    results = [tracker.init(frames[0], init_box)]
    for frame in frames[1:]:
        results.append(tracker.step(frame))
    return results


def format_result_line(index: int, box: Box, frame_w: int, frame_h: int, score: float) -> str:
    """`frame_index x0 y0 x1 y1 score` in frame pixels, 6 decimals."""
    return (f"{index} {box.x0 * frame_w:.6f} {box.y0 * frame_h:.6f} "
            f"{box.x1 * frame_w:.6f} {box.y1 * frame_h:.6f} {score:.6f}")
