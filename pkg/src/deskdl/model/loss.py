"""Class-weighted softmax cross-entropy for imbalanced segmentation.

Per-pixel weights come from the label class; each sample is normalised by
the summed weights of its own pixels, not the pixel count, so the loss
magnitude stays comparable across imbalance levels, and the batch value is
the mean over samples. Uniform logits give exactly ln(C) under any
weighting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ClassWeights:
    """Inverse-square-root class weighting derived from label frequencies."""

    frequencies: tuple

    def __post_init__(self):
        f = self.frequencies
        if len(f) < 2 or any(v <= 0 for v in f):
            raise ValueError(f"frequencies must be positive: {f}")
        if abs(sum(f) - 1.0) > 1e-6:
            raise ValueError(f"frequencies must sum to 1, got {sum(f)}")

    @property
    def weights(self) -> np.ndarray:
        return 1.0 / np.sqrt(np.asarray(self.frequencies, dtype=np.float64))

    def vector(self, dtype=np.float32) -> np.ndarray:
        return self.weights.astype(dtype)

    @classmethod
    def uniform(cls, classes: int) -> "ClassWeights":
        return cls(tuple(1.0 / classes for _ in range(classes)))


def uniform_weights(classes: int, dtype=np.float32) -> np.ndarray:
    return np.ones(classes, dtype=dtype)


def weighted_ce_loss(logits, labels, weights):
    """Weighted cross-entropy and its analytic gradient wrt the logits.

    Per sample n:  L_n = sum_p w[y_np] * (-log softmax(logits_np)[y_np])
                         / sum_p w[y_np]
    and the loss is the mean of L_n over the batch. Normalising inside each
    sample keeps the batch mean associative: averaging per-rank gradients of
    local batches equals the gradient of the combined batch, whatever the
    split, so data-parallel runs of equal global batch follow one trajectory.

    ``logits`` is [N, C, ...] with the class axis second, ``labels`` integer
    [N, ...], ``weights`` a length-C positive vector. Returns
    ``(loss, dlogits)`` with the gradient in the logits dtype.
    """
    logits = np.asarray(logits)
    w = np.asarray(weights, dtype=logits.dtype)
    classes = logits.shape[1]
    if w.shape != (classes,):
        raise ValueError(f"weights shape {w.shape} does not match {classes} classes")
    if np.any(w <= 0):
        raise ValueError("class weights must be positive")

    lab = np.asarray(labels)
    if lab.shape != logits.shape[:1] + logits.shape[2:]:
        raise ValueError(f"labels shape {lab.shape} does not match logits {logits.shape}")
    lab = lab.astype(np.int64, copy=False)
    if lab.size and (lab.min() < 0 or lab.max() >= classes):
        raise ValueError(f"labels outside [0, {classes})")

    x = np.moveaxis(logits, 1, -1)
    z = x - x.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    n = lab.shape[0]
    wy = w[lab]
    # per-sample weight totals, kept broadcastable against the pixel grid
    wsum = wy.reshape(n, -1).sum(axis=1).reshape((n,) + (1,) * (wy.ndim - 1))
    nll = -np.take_along_axis(logp, lab[..., None], axis=-1)[..., 0]
    per_sample = (wy * nll).reshape(n, -1).sum(axis=1) / wsum.reshape(n)
    loss = float(per_sample.mean())

    g = np.exp(logp)
    np.put_along_axis(g, lab[..., None],
                      np.take_along_axis(g, lab[..., None], axis=-1) - 1, axis=-1)
    g *= (wy / (wsum * n))[..., None]
    dlogits = np.ascontiguousarray(np.moveaxis(g, -1, 1))
    return loss, dlogits


def expected_uniform_loss(classes: int) -> float:
    """Loss at exactly uniform logits, independent of weights and pixel mix."""
    return math.log(classes)
