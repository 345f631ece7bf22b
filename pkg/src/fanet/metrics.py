"""Confusion-matrix accumulation and segmentation metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass
class MetricsReport:
    confusion: np.ndarray  # (K, K) int64, rows are ground truth
    per_class_iou: list  # float per class, None when absent from pred and truth
    miou: float
    pixel_acc: float
    iters_seen: int = 0

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "per_class_iou": [None if v is None else float(v) for v in self.per_class_iou],
            "miou": float(self.miou),
            "pixel_acc": float(self.pixel_acc),
            "iters_seen": int(self.iters_seen),
        }


def confusion_matrix(
    pred: np.ndarray, truth: np.ndarray, num_classes: int, ignore_index: int = 255
) -> np.ndarray:
    """Count (truth, pred) pairs over non-ignored pixels."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimensionError(
            f"confusion_matrix: prediction shape {pred.shape} != truth shape {truth.shape}"
        )
    keep = truth != ignore_index
    t = truth[keep].astype(np.int64)
    p = pred[keep].astype(np.int64)
    counts = np.bincount(t * num_classes + p, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def report_from_confusion(confusion: np.ndarray, iters_seen: int = 0) -> MetricsReport:
    """Per-class IoU, mean IoU and pixel accuracy from raw counts.

    A class absent from both prediction and ground truth has an undefined
    IoU and is excluded from the mean rather than counted as 0 or 1.
    """
    confusion = np.asarray(confusion, dtype=np.int64)
    tp = np.diag(confusion).astype(np.float64)
    fp = confusion.sum(axis=0).astype(np.float64) - tp
    fn = confusion.sum(axis=1).astype(np.float64) - tp
    union = tp + fp + fn
    per_class = [None if union[k] == 0 else float(tp[k] / union[k]) for k in range(len(tp))]
    present = [v for v in per_class if v is not None]
    miou = float(np.mean(present)) if present else 0.0
    total = confusion.sum()
    pixel_acc = float(tp.sum() / total) if total else 0.0
    return MetricsReport(
        confusion=confusion,
        per_class_iou=per_class,
        miou=miou,
        pixel_acc=pixel_acc,
        iters_seen=iters_seen,
    )
