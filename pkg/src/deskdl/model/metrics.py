"""Segmentation metrics."""

from __future__ import annotations

import numpy as np


def iou(predictions, labels, cls: int) -> float:
    """Intersection over union for one class; 1.0 when both sets are empty."""
    p = np.asarray(predictions) == cls
    t = np.asarray(labels) == cls
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    union = np.logical_or(p, t).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, t).sum() / union)


def iou_all(predictions, labels, classes: int) -> np.ndarray:
    return np.array([iou(predictions, labels, c) for c in range(classes)])


def pixel_accuracy(predictions, labels) -> float:
    p = np.asarray(predictions)
    t = np.asarray(labels)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    return float((p == t).mean())
