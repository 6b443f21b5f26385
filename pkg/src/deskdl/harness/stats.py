"""Throughput statistics over step records.

Per step the per-rank samples/s are averaged over ranks; over time the
sustained value is the median of that series and the spread is the central
68% band, i.e. the 16th and 84th percentiles (linear interpolation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..flops import flops_to_rate


@dataclass(frozen=True)
class StepRecord:
    step: int
    rates: tuple      # per-rank samples/s, length = rank count
    wall: float       # seconds for this step (slowest rank)
    loss: float       # mean over ranks of the local loss

    def __post_init__(self):
        if not self.rates:
            raise ValueError("empty per-rank rate vector")

    @property
    def rank_mean(self) -> float:
        return float(np.mean(self.rates))


@dataclass(frozen=True)
class SustainedStats:
    median: float       # per-rank samples/s, sustained
    p16: float
    p84: float
    world: int
    steps: int
    flops_per_s: float  # via per-sample FLOPs x global samples/s; 0 if unknown

    @property
    def global_rate(self) -> float:
        """Whole-job samples/s: world x per-rank sustained rate."""
        return self.median * self.world

    @property
    def ci_width(self) -> float:
        return self.p84 - self.p16

    def to_dict(self) -> dict:
        return {"median_rank_rate": self.median, "p16": self.p16,
                "p84": self.p84, "world": self.world, "steps": self.steps,
                "global_rate": self.global_rate,
                "flops_per_s": self.flops_per_s}


def sustained_stats(records, per_sample_flops: float = 0.0,
                    warmup: int = 1) -> SustainedStats:
    """Median + central 68% CI of the per-step rank-mean rate series.

    The first `warmup` steps are dropped when enough records remain; they
    carry one-time costs (allocator, socket setup) the sustained figure
    should not include.
    """
    if not records:
        raise ValueError("no step records")
    world = len(records[0].rates)
    for r in records:
        if len(r.rates) != world:
            raise ValueError(f"step {r.step}: rate vector length {len(r.rates)}"
                             f" != {world}")
    used = records[warmup:] if len(records) > warmup else records
    series = np.array([r.rank_mean for r in used], dtype=np.float64)
    median = float(np.median(series))
    p16, p84 = (float(v) for v in np.percentile(series, [16.0, 84.0]))
    fps = flops_to_rate(per_sample_flops, median * world) if per_sample_flops else 0.0
    return SustainedStats(median=median, p16=p16, p84=p84, world=world,
                          steps=len(used), flops_per_s=fps)


def records_to_csv(records) -> str:
    lines = ["step,rank_mean_rate,wall_s,loss"]
    lines.extend(f"{r.step},{r.rank_mean:.6f},{r.wall:.6f},{r.loss:.6f}"
                 for r in records)
    return "\n".join(lines) + "\n"


def loss_curve_csv(records) -> str:
    lines = ["step,loss"]
    lines.extend(f"{r.step},{r.loss:.6f}" for r in records)
    return "\n".join(lines) + "\n"
