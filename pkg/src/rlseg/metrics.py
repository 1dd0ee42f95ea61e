"""Foreground precision/recall/F-measure and IoU for binary masks."""
from __future__ import annotations

import numpy as np


def _binary(mask, name: str) -> np.ndarray:
    arr = np.asarray(mask)
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} is not binary (values must be 0 or 1)")
    return arr.astype(bool)


def confusion(pred, gt) -> tuple[int, int, int]:
    """True positives, false positives and false negatives over foreground pixels."""
    if np.shape(pred) != np.shape(gt):
        raise ValueError(f"shape mismatch: pred {np.shape(pred)} vs gt {np.shape(gt)}")
    p = _binary(pred, "pred")
    g = _binary(gt, "gt")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return tp, fp, fn


def f_measure(pred, gt) -> tuple[float, float, float]:
    """``(precision, recall, F1)``.

    Empty prediction gives precision 0, empty ground truth gives recall 0 and
    F is 0 whenever precision + recall is 0.
    """
    tp, fp, fn = confusion(pred, gt)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f


def iou(pred, gt) -> float:
    tp, fp, fn = confusion(pred, gt)
    union = tp + fp + fn
    return tp / union if union else 0.0


def mean_fmeasure(preds, gts) -> float:
    return float(np.mean([f_measure(p, g)[2] for p, g in zip(preds, gts)]))
