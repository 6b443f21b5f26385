"""Micro-benchmarks: all-reduce algorithms, prefetch pipeline, conv kernels.

Every benchmark verifies correctness alongside the timing; a benchmark that
returns wrong numbers fast is worse than no benchmark.
"""

from __future__ import annotations

import logging
import time

import numpy as np

from ..collectives import ChunkChannel, hybrid_allreduce, oracle_reduce, \
    ring_allreduce
from ..core import RankTopology
from ..data_plane import pipeline_run
from ..model.kernels import available_backends
from ..runtime import run_rank_threads

log = logging.getLogger("deskdl.bench")


def _rel_err(got, want) -> float:
    denom = float(np.max(np.abs(want)))
    if denom == 0.0:
        return float(np.max(np.abs(got)))
    return float(np.max(np.abs(got - want))) / denom


def _topology_for(world: int) -> RankTopology:
    """Widest node split with at least two local ranks when possible."""
    for g in (4, 3, 2):
        if world % g == 0 and world // g > 0:
            return RankTopology(world // g, g, min(2, g))
    return RankTopology(world, 1, 1)


def bench_allreduce(world: int = 8, sizes=(1000, 100_000, 1_000_000),
                    repeats: int = 3, backend: str = "inproc",
                    latency_s: float = 0.0, tol: float = 1e-5) -> list:
    """Time ring and hybrid all-reduce against the sequential oracle.

    Returns rows of dicts; raises if any result drifts past tol.
    """
    topo = _topology_for(world)
    rows = []
    for n in sizes:
        rng = np.random.default_rng(17)
        inputs = [rng.standard_normal(n).astype(np.float32) for _ in range(world)]
        want = oracle_reduce(inputs, "sum")

        for algo in ("ring", "hybrid"):
            def actor(rank, dx, algo=algo):
                chan = ChunkChannel(dx)
                best = float("inf")
                out = None
                for rep in range(repeats):
                    t0 = time.perf_counter()
                    if algo == "ring":
                        out = ring_allreduce(chan, list(range(world)),
                                             f"b{n}.{rep}", inputs[rank],
                                             epoch=rep, op="sum")
                    else:
                        out = hybrid_allreduce(chan, topo, f"b{n}.{rep}",
                                               inputs[rank], epoch=rep, op="sum")
                    best = min(best, time.perf_counter() - t0)
                return best, out

            results = run_rank_threads(world, actor, backend=backend,
                                       latency_s=latency_s)
            worst = max(_rel_err(out, want) for _, out in results)
            if worst > tol:
                raise AssertionError(
                    f"{algo} allreduce n={n}: max rel err {worst:.2e} > {tol}")
            identical = all(np.array_equal(results[0][1], out)
                            for _, out in results[1:])
            best_s = min(t for t, _ in results)
            rows.append({"algo": algo, "world": world, "n": n,
                         "best_s": best_s, "rel_err": worst,
                         "byte_identical": identical,
                         "mb_s": (4.0 * n / best_s / 1e6) if best_s else 0.0})
            log.info("%s p=%d n=%d: %.4fs, err %.1e", algo, world, n,
                     best_s, worst)
    return rows


def bench_pipeline(items: int = 200, capacities=(1, 2, 4, 8),
                   workers_list=(1, 2, 4), read_cost_s: float = 0.001,
                   consume_cost_s: float = 0.0005) -> list:
    """Stall fraction and throughput across queue capacities and workers."""
    rows = []
    for workers in workers_list:
        for cap in capacities:
            def source(w, workers=workers):
                def gen():
                    for i in range(w, items, workers):
                        time.sleep(read_cost_s)
                        yield i
                return gen()

            plog = pipeline_run(source, capacity=cap, workers=workers,
                                consume=lambda _: time.sleep(consume_cost_s))
            if sorted(plog.values) != list(range(items)):
                raise AssertionError("pipeline dropped or duplicated items")
            rows.append({"workers": workers, "capacity": cap,
                         "items_per_s": items / plog.duration,
                         "stall_fraction": plog.stall_fraction(skip=cap)})
    return rows


def bench_kernels(shapes=((2, 16, 32, 24, 16, 3),), repeats: int = 3) -> list:
    """Compare available conv backends on forward+backward timings.

    Shape tuples are (batch, cin, h, w, cout, k). All backends must agree
    with each other within float tolerance.
    """
    backends = available_backends()
    rows = []
    for batch, cin, h, w, cout, k in shapes:
        rng = np.random.default_rng(5)
        x = rng.standard_normal((batch, cin, h, w)).astype(np.float32)
        wgt = rng.standard_normal((cout, cin, k, k)).astype(np.float32)
        outputs = {}
        for name, impl in backends.items():
            best = float("inf")
            for _ in range(repeats):
                t0 = time.perf_counter()
                y, cache = impl.conv2d_forward(x, wgt)
                dy = np.ones_like(y)
                dw = impl.conv2d_backward_weights(cache, dy, wgt.shape)
                dx = impl.conv2d_backward_input(dy, wgt, x.shape)
                best = min(best, time.perf_counter() - t0)
            outputs[name] = (y, dw, dx)
            rows.append({"backend": name, "shape": (batch, cin, h, w, cout, k),
                         "fwd_bwd_s": best})
        names = list(outputs)
        for other in names[1:]:
            for a, b in zip(outputs[names[0]], outputs[other]):
                if _rel_err(b, a) > 1e-4:
                    raise AssertionError(
                        f"kernel backends {names[0]} vs {other} disagree")
    return rows
