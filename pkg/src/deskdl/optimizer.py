"""SGD with momentum, LARC layer-wise rate control and lag-1 gradient application.

All update rules are pure float32 array math over per-layer state, so runs
with identical inputs are bitwise reproducible. Order of operations: the
LARC effective rate is chosen from the raw gradient and weight norms, decay
is folded into the momentum accumulator, then the weights move.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1.0
    momentum: float = 0.9
    trust: float = 0.02
    weight_decay: float = 0.0
    eps: float = 1e-8
    lag: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.trust <= 0:
            raise ValueError("lr and trust must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0 or self.eps <= 0:
            raise ValueError("weight_decay must be >= 0 and eps > 0")
        if self.lag not in (0, 1):
            raise ValueError("only lag 0 and 1 are supported")


class LayerParam:
    """One layer's weights plus optimizer state (momentum, lagged gradient)."""

    __slots__ = ("name", "w", "m", "g_prev")

    def __init__(self, name: str, w):
        self.name = name
        self.w = np.asarray(w, dtype=np.float32)
        self.m = np.zeros_like(self.w)
        self.g_prev = None


def larc_effective_lr(w, g, cfg: OptimConfig) -> float:
    """min(trust * |w| / (|g| + wd * |w|), lr); lr when |w| = 0.

    eps only floors the denominator (degenerate layers fall back to lr);
    it must not perturb the ratio for well-conditioned inputs.
    """
    wn = float(np.linalg.norm(w))
    gn = float(np.linalg.norm(g))
    if not (np.isfinite(wn) and np.isfinite(gn)):
        raise FloatingPointError("non-finite norm in LARC")
    if wn == 0.0:
        return cfg.lr
    denom = gn + cfg.weight_decay * wn
    if denom < cfg.eps:
        return cfg.lr
    return min(cfg.trust * wn / denom, cfg.lr)


def sgd_step(param: LayerParam, g, lr_eff: float, cfg: OptimConfig) -> None:
    """m <- beta*m + g + wd*w; w <- w - lr_eff*m. In place, float32."""
    g = np.asarray(g, dtype=np.float32)
    if g.shape != param.w.shape:
        raise ValueError(f"{param.name}: gradient shape {g.shape} != {param.w.shape}")
    m = param.m
    m *= np.float32(cfg.momentum)
    m += g
    if cfg.weight_decay:
        m += np.float32(cfg.weight_decay) * param.w
    param.w -= np.float32(lr_eff) * m


def larc_sgd_step(param: LayerParam, g, cfg: OptimConfig) -> float:
    """LARC-scaled SGD step; returns the effective rate used."""
    lr_eff = larc_effective_lr(param.w, g, cfg)
    sgd_step(param, g, lr_eff, cfg)
    return lr_eff


def lagged_apply(param: LayerParam, g_current, cfg: OptimConfig) -> bool:
    """Apply the configured lag; returns True if the weights moved.

    lag 0 applies the current gradient. lag 1 applies the previous step's
    gradient; the first call only buffers (no update), which makes a
    weight-independent gradient stream shift-equivalent to lag 0 exactly.
    """
    if cfg.lag == 0:
        larc_sgd_step(param, g_current, cfg)
        return True
    g = param.g_prev
    param.g_prev = np.array(g_current, dtype=np.float32, copy=True)
    if g is None:
        return False
    larc_sgd_step(param, g, cfg)
    return True
