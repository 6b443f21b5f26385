"""Weak-scaling sweeps and the gradient-lag throughput comparison.

Weak scaling keeps the per-rank work fixed while the rank count grows, so
perfect scaling means constant per-rank rate: efficiency(P) is the measured
job throughput over P x the single-rank baseline. Desk-scale numbers share
one CPU among all rank threads, so the sweep validates the measurement
methodology, not data-center efficiency figures.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

from ..core import RankTopology
from .config import RunConfig
from .trainer import train_run

log = logging.getLogger("deskdl.scaling")


@dataclass(frozen=True)
class ScalePoint:
    workers: int
    median_rate: float     # per-rank samples/s, sustained
    p16: float
    p84: float
    global_rate: float
    efficiency: float

    def to_row(self) -> str:
        return (f"{self.workers},{self.median_rate:.6f},{self.p16:.6f},"
                f"{self.p84:.6f},{self.global_rate:.6f},{self.efficiency:.4f}")


def _with_workers(base: RunConfig, workers: int) -> RunConfig:
    """Same run at a different rank count: one rank per simulated node."""
    topo = RankTopology(num_nodes=workers, local_ranks=1, lanes=1,
                        control_radix=base.topology.control_radix)
    return dataclasses.replace(base, topology=topo, out_dir="")


def weak_scaling(base: RunConfig, worker_counts) -> list:
    """Efficiency table over rank counts; the baseline is the first count.

    efficiency(P) = throughput(P) / (P x throughput(1)), which reduces to
    the ratio of per-rank sustained rates.
    """
    counts = sorted(set(int(p) for p in worker_counts))
    if not counts or counts[0] < 1:
        raise ValueError("worker counts must be positive")
    if counts[0] != 1:
        raise ValueError("weak scaling needs the single-worker baseline")

    points = []
    baseline = None
    for p in counts:
        stats = train_run(_with_workers(base, p)).stats
        if baseline is None:
            baseline = stats.median
        eff = stats.median / baseline if baseline > 0 else 0.0
        points.append(ScalePoint(workers=p, median_rate=stats.median,
                                 p16=stats.p16, p84=stats.p84,
                                 global_rate=stats.global_rate,
                                 efficiency=eff))
        log.info("weak scaling P=%d: %.3f samples/s/rank, efficiency %.3f",
                 p, stats.median, eff)
    return points


def scaling_csv(points) -> str:
    lines = ["workers,median_rank_rate,p16,p84,global_rate,efficiency"]
    lines.extend(p.to_row() for p in points)
    return "\n".join(lines) + "\n"


def lag_throughput(base: RunConfig) -> dict:
    """Same run with lag 0 and lag 1; reports both sustained rates.

    With link latency injected, lag 1 overlaps each step's reduction with
    the next step's compute instead of waiting for it.
    """
    rates = {}
    for lag in (0, 1):
        cfg = dataclasses.replace(base, lag=lag, out_dir="")
        rates[lag] = train_run(cfg).stats
        log.info("lag %d: %.3f samples/s/rank", lag, rates[lag].median)
    return {"lag0": rates[0].to_dict(), "lag1": rates[1].to_dict(),
            "speedup": (rates[1].median / rates[0].median
                        if rates[0].median > 0 else 0.0)}
