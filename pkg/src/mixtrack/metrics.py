"""Tracking metrics and the one-pass evaluation loop."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .box import Box, iou
from .tensor import UsageError

SUCCESS_THRESHOLDS = np.round(np.arange(21) * 0.05, 10)


def success_auc(ious) -> float:
    """Mean over thresholds {0, 0.05, ..., 1} of the fraction of frames
    whose IoU strictly exceeds the threshold."""
    ious = np.asarray(list(ious), dtype=np.float64)
    if ious.size == 0:
        raise UsageError("success_auc needs at least one IoU value")
    return float(np.mean([(ious > thr).mean() for thr in SUCCESS_THRESHOLDS]))


def center_precision(pred: Box, gt: Box) -> float:
    """Center distance normalized by the ground-truth box extents."""
    (pcx, pcy), (gcx, gcy) = pred.center, gt.center
    dx = (pcx - gcx) / max(gt.width, 1e-9)
    dy = (pcy - gcy) / max(gt.height, 1e-9)
    return float(np.hypot(dx, dy))


@dataclass
class EvalReport:
    per_sequence_ious: list = field(default_factory=list)   # list of lists
    precision_threshold: float = 0.2
    precision: float = 0.0

    @property
    def all_ious(self) -> np.ndarray:
        return np.concatenate([np.asarray(x) for x in self.per_sequence_ious])

    @property
    def mean_iou(self) -> float:
        return float(self.all_ious.mean())

    @property
    def auc(self) -> float:
        return success_auc(self.all_ious)

    def summary(self) -> dict:
        return {
            "sequences": len(self.per_sequence_ious),
            "frames": int(self.all_ious.size),
            "mean_iou": self.mean_iou,
            "success_auc": self.auc,
        }


def evaluate_boxes(pred_boxes, gt_boxes) -> list[float]:
    if len(pred_boxes) != len(gt_boxes):
        raise UsageError("prediction / ground-truth length mismatch")
    return [iou(p, g) for p, g in zip(pred_boxes, gt_boxes)]


def evaluate_tracker(model, tracker_cfg, sequences, spm=None,
                     precision_threshold: float = 0.2):
    """Run one-pass evaluation over sequences (init at frame 0, no resets)."""
    from .tracker import track_sequence

    report = EvalReport(precision_threshold=precision_threshold)
    precisions = []
    for seq in sequences:
        results = track_sequence(model, tracker_cfg, seq.frames, seq.boxes[0], spm=spm)
        pred = [box for box, _ in results]
        report.per_sequence_ious.append(evaluate_boxes(pred, seq.boxes))
        precisions.extend(
            center_precision(p, g) <= precision_threshold for p, g in zip(pred, seq.boxes)
        )
    report.precision = float(np.mean(precisions)) if precisions else 0.0
    return report


def write_report_csv(path, report: EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sequence", "frame", "iou"])
        for si, ious in enumerate(report.per_sequence_ious):
            for fi, v in enumerate(ious):
                writer.writerow([si, fi, f"{v:.6f}"])
        writer.writerow(["summary", "mean_iou", f"{report.mean_iou:.6f}"])
        writer.writerow(["summary", "success_auc", f"{report.auc:.6f}"])
