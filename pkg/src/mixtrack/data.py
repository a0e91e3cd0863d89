"""Synthetic tracking sequences and training-sample construction.

A textured rectangle moves over a cluttered background with a breathing
scale and optional occluder passes. Geometry is kept in float: the target
is rendered with fractional pixel coverage, so the ground-truth box is
exact rather than rounded to the pixel grid. Everything is deterministic
per named stream.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .box import Box, iou
from .rng import stream
from .tensor import _interp_matrix


@dataclass(frozen=True)
class SyntheticSequenceConfig:
    frame_size: int = 128
    length: int = 40
    base_side: float = 26.0         # nominal target side, px
    side_jitter: float = 0.25       # relative spread of per-sequence base side
    speed_min: float = 0.8          # px / frame
    speed_max: float = 3.0
    scale_amplitude: float = 0.15   # side breathes by +-A
    scale_period: float = 24.0
    clutter_count: int = 6
    noise: float = 0.02
    occluder_prob: float = 0.0
    seed: int = 0
    index: int = 0


def np_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resize of a (C, H, W) array (plain NumPy)."""
    c, h, w = img.shape
    ah = _interp_matrix(h, out_h, np.float64)
    aw = _interp_matrix(w, out_w, np.float64)
    return ah @ img @ aw.T


def _paste_rect(frame: np.ndarray, box_px: tuple[float, float, float, float],
                texture: np.ndarray) -> None:
    """Alpha-blend a texture over a float-coordinate rectangle.

    Pixel coverage is computed exactly per axis, so the drawn extent
    matches the box to sub-pixel precision.
    """
    _, fh, fw = frame.shape
    x0, y0, x1, y1 = box_px
    ix0, ix1 = max(0, int(np.floor(x0))), min(fw, int(np.ceil(x1)))
    iy0, iy1 = max(0, int(np.floor(y0))), min(fh, int(np.ceil(y1)))
    if ix1 <= ix0 or iy1 <= iy0:
        return
    xs = np.arange(ix0, ix1)
    ys = np.arange(iy0, iy1)
    cov_x = np.clip(np.minimum(x1, xs + 1.0) - np.maximum(x0, xs), 0.0, 1.0)
    cov_y = np.clip(np.minimum(y1, ys + 1.0) - np.maximum(y0, ys), 0.0, 1.0)
    alpha = cov_y[:, None] * cov_x[None, :]

    th, tw = texture.shape[1:]
    u = ((xs + 0.5 - x0) / max(x1 - x0, 1e-9)) * tw - 0.5
    v = ((ys + 0.5 - y0) / max(y1 - y0, 1e-9)) * th - 0.5
    u0 = np.clip(np.floor(u).astype(np.int64), 0, tw - 1)
    v0 = np.clip(np.floor(v).astype(np.int64), 0, th - 1)
    u1 = np.minimum(u0 + 1, tw - 1)
    v1 = np.minimum(v0 + 1, th - 1)
    fu = np.clip(u - u0, 0.0, 1.0)
    fv = np.clip(v - v0, 0.0, 1.0)
    tex = (
        texture[:, v0[:, None], u0[None, :]] * ((1 - fv)[:, None] * (1 - fu)[None, :])
        + texture[:, v0[:, None], u1[None, :]] * ((1 - fv)[:, None] * fu[None, :])
        + texture[:, v1[:, None], u0[None, :]] * (fv[:, None] * (1 - fu)[None, :])
        + texture[:, v1[:, None], u1[None, :]] * (fv[:, None] * fu[None, :])
    )
    region = frame[:, iy0:iy1, ix0:ix1]
    frame[:, iy0:iy1, ix0:ix1] = region * (1.0 - alpha) + tex * alpha


def _make_texture(rng: np.random.Generator, cells: int = 6) -> np.ndarray:
    """High-contrast random texture with a dark border for crisp corners."""
    base = rng.uniform(0.0, 1.0, size=(3, cells, cells))
    tex = np.clip(np_resize(base, 24, 24), 0.0, 1.0)
    border = rng.uniform(0.0, 0.25, size=3)
    tex[:, :2, :] = border[:, None, None]
    tex[:, -2:, :] = border[:, None, None]
    tex[:, :, :2] = border[:, None, None]
    tex[:, :, -2:] = border[:, None, None]
    return tex


@dataclass
class SyntheticSequence:
    frames: list[np.ndarray]        # uint8 (3, H, W)
    boxes: list[Box]                # frame-normalized ground truth
    occluded: list[bool]
    config: SyntheticSequenceConfig

    @property
    def frame_size(self) -> int:
        return self.config.frame_size


def synth_sequence(cfg: SyntheticSequenceConfig) -> SyntheticSequence:
    rng = stream(cfg.seed, "seq", cfg.index)
    size = cfg.frame_size

    bg = np.empty((3, size, size))
    bg[:] = rng.uniform(0.15, 0.85, size=3)[:, None, None]
    for _ in range(cfg.clutter_count):
        cw, ch = rng.uniform(8, size / 3, size=2)
        cx, cy = rng.uniform(0, size, size=2)
        color = rng.uniform(0.0, 1.0, size=(3, 1, 1))
        _paste_rect(bg, (cx - cw / 2, cy - ch / 2, cx + cw / 2, cy + ch / 2),
                    np.broadcast_to(color, (3, 2, 2)).copy())

    texture = _make_texture(rng)
    base = cfg.base_side * (1.0 + rng.uniform(-cfg.side_jitter, cfg.side_jitter))
    amp = cfg.scale_amplitude
    phase = rng.uniform(0.0, 2 * np.pi)
    margin = base * (1.0 + amp) / 2.0 + 2.0
    cx = rng.uniform(margin, size - margin)
    cy = rng.uniform(margin, size - margin)
    speed = rng.uniform(cfg.speed_min, cfg.speed_max)
    ang = rng.uniform(0.0, 2 * np.pi)
    vx, vy = speed * np.cos(ang), speed * np.sin(ang)

    has_occluder = bool(rng.uniform() < cfg.occluder_prob)
    occ_window = max(6, cfg.length // 5)
    occ_start = int(rng.integers(cfg.length // 4, max(cfg.length // 4 + 1, cfg.length - occ_window - 2)))
    occ_color = rng.uniform(0.0, 1.0, size=(3, 1, 1))
    occ_side = base * 1.5

    frames: list[np.ndarray] = []
    boxes: list[Box] = []
    occluded: list[bool] = []
    for t in range(cfg.length):
        side = base * (1.0 + amp * np.sin(2 * np.pi * t / cfg.scale_period + phase))
        frame = bg.copy()
        frame += rng.normal(0.0, cfg.noise, size=frame.shape)
        box_px = (cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2)
        _paste_rect(frame, box_px, texture)
        gt = Box(box_px[0] / size, box_px[1] / size, box_px[2] / size, box_px[3] / size)

        occ_flag = False
        if has_occluder and occ_start <= t < occ_start + occ_window:
            u = (t - occ_start) / max(1, occ_window - 1)
            off = (u - 0.5) * 2.0 * 2.2 * occ_side
            ox, oy = cx + off, cy
            occ_box = (ox - occ_side / 2, oy - occ_side / 2, ox + occ_side / 2, oy + occ_side / 2)
            _paste_rect(frame, occ_box,
                        np.broadcast_to(occ_color, (3, 2, 2)).copy())
            occ = Box(occ_box[0] / size, occ_box[1] / size, occ_box[2] / size, occ_box[3] / size)
            occ_flag = iou(occ, gt) > 0.3
        frames.append((np.clip(frame, 0.0, 1.0) * 255.0).round().astype(np.uint8))
        boxes.append(gt)
        occluded.append(occ_flag)

        cx += vx
        cy += vy
        if cx < margin or cx > size - margin:
            vx = -vx
            cx = np.clip(cx, margin, size - margin)
        if cy < margin or cy > size - margin:
            vy = -vy
            cy = np.clip(cy, margin, size - margin)
    return SyntheticSequence(frames, boxes, occluded, cfg)


def make_corpus(cfg: SyntheticSequenceConfig, count: int, first_index: int = 0):
    return [synth_sequence(replace(cfg, index=first_index + i)) for i in range(count)]


# -- training sample construction --------------------------------------------------


@dataclass(frozen=True)
class SampleConfig:
    num_templates: int = 2
    template_factor: float = 2.0
    search_factor: float = 5.0
    template_size: int = 48
    search_size: int = 96
    center_jitter: float = 0.1     # of the search-crop side, per axis
    scale_jitter: float = 0.2
    hflip: bool = True
    brightness: float = 0.2


def _jittered_box(box: Box, rng: np.random.Generator, center_amount: float,
                  scale_jitter: float) -> Box:
    """Shift the center by +-center_amount (normalized units) per axis and
    rescale by (1 +- scale_jitter)."""
    w, h = box.width, box.height
    cx, cy = box.center
    cx += rng.uniform(-center_amount, center_amount)
    cy += rng.uniform(-center_amount, center_amount)
    s = 1.0 + rng.uniform(-scale_jitter, scale_jitter)
    return Box.from_cxcywh(cx, cy, w * s, h * s)


def _search_jitter_amount(box: Box, cfg: SampleConfig) -> float:
    # center jitter is a fraction of the search-crop side, so the target
    # lands well off-center and the model must genuinely localize it
    return cfg.center_jitter * cfg.search_factor * np.sqrt(box.width * box.height)


def sample_localization_batch(corpus, batch: int, cfg: SampleConfig, rng: np.random.Generator):
    """Batch of (templates, search, gt-box-in-crop) triples as float arrays.

    Templates are exact ground-truth crops; the search region is cropped
    around a jittered ground-truth box from another frame of the same
    sequence. Augmentation: horizontal flip + brightness jitter.
    """
    from .tracker import crop_region

    tpls, searches, labels = [], [], []
    for _ in range(batch):
        seq = corpus[int(rng.integers(len(corpus)))]
        frames, boxes = seq.frames, seq.boxes
        t_idx = rng.integers(len(frames), size=cfg.num_templates)
        s_idx = int(rng.integers(len(frames)))

        tpl_crops = [
            crop_region(frames[i], boxes[i], cfg.template_factor, cfg.template_size)[0]
            for i in t_idx
        ]
        gt_box = boxes[s_idx]
        jbox = _jittered_box(gt_box, rng, _search_jitter_amount(gt_box, cfg), cfg.scale_jitter)
        search, mapping = crop_region(frames[s_idx], jbox, cfg.search_factor, cfg.search_size)
        label = mapping.box_to_crop(gt_box).sanitized()

        if cfg.hflip and rng.uniform() < 0.5:
            tpl_crops = [c[:, :, ::-1].copy() for c in tpl_crops]
            search = search[:, :, ::-1].copy()
            label = Box(1.0 - label.x1, label.y0, 1.0 - label.x0, label.y1)
        if cfg.brightness > 0:
            gain = 1.0 + rng.uniform(-cfg.brightness, cfg.brightness)
            tpl_crops = [np.clip(c * gain, 0.0, 1.0) for c in tpl_crops]
            search = np.clip(search * gain, 0.0, 1.0)

        tpls.append(np.stack(tpl_crops))
        searches.append(search)
        labels.append(label.as_array())
    return np.stack(tpls), np.stack(searches), np.stack(labels)


def sample_score_batch(corpus, batch: int, cfg: SampleConfig, rng: np.random.Generator,
                       positive_iou: float = 0.5):
    """Candidate crops for score training: half near the target, half far.

    Labels are honest: y = 1 iff the candidate box overlaps the ground
    truth with IoU >= positive_iou in crop coordinates.
    """
    from .tracker import crop_region

    tpls, searches, cand_boxes, labels = [], [], [], []
    for b in range(batch):
        seq = corpus[int(rng.integers(len(corpus)))]
        frames, boxes = seq.frames, seq.boxes
        t_idx = rng.integers(len(frames), size=cfg.num_templates)
        s_idx = int(rng.integers(len(frames)))
        tpl_crops = [
            crop_region(frames[i], boxes[i], cfg.template_factor, cfg.template_size)[0]
            for i in t_idx
        ]
        gt_box = boxes[s_idx]
        jbox = _jittered_box(gt_box, rng, _search_jitter_amount(gt_box, cfg), cfg.scale_jitter)
        search, mapping = crop_region(frames[s_idx], jbox, cfg.search_factor, cfg.search_size)
        gt = mapping.box_to_crop(gt_box).sanitized()

        near = b % 2 == 0
        if near:
            cand = _jittered_box(gt, rng, 0.15 * max(gt.width, gt.height), cfg.scale_jitter)
        else:
            w, h = gt.width, gt.height
            cx, cy = gt.center
            cx += rng.uniform(0.6, 2.0) * w * (1 if rng.uniform() < 0.5 else -1)
            cy += rng.uniform(0.6, 2.0) * h * (1 if rng.uniform() < 0.5 else -1)
            s = float(rng.uniform(0.5, 1.8))
            cand = Box.from_cxcywh(cx, cy, w * s, h * s)
        cand = cand.sanitized(min_size=0.02)
        label = 1.0 if iou(cand, gt) >= positive_iou else 0.0

        tpls.append(np.stack(tpl_crops))
        searches.append(search)
        cand_boxes.append(cand)
        labels.append(label)
    return np.stack(tpls), np.stack(searches), cand_boxes, np.array(labels)
