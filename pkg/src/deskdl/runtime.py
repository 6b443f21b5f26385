"""Run one function per rank on its own thread over a shared fabric.

Used by tests, benchmarks and the staging executor. The in-process backend
shares an InprocFabric; the tcp backend gives every rank a loopback socket
endpoint and distributes the address book before any thread starts.
"""

from __future__ import annotations

import threading

from .transport import Demux, InprocFabric, TcpEndpoint


def run_rank_threads(world: int, fn, backend: str = "inproc",
                     latency_s: float = 0.0, timeout: float = 600.0) -> list:
    """Execute fn(rank, demux) on one thread per rank; returns per-rank results.

    Any rank's exception is re-raised after all threads stop (the first one
    by rank order).
    """
    if backend == "inproc":
        fabric = InprocFabric(latency_s=latency_s)
        endpoints = [fabric.register(r) for r in range(world)]
        cleanup = fabric.close
    elif backend == "tcp":
        endpoints = [TcpEndpoint(r, latency_s=latency_s) for r in range(world)]
        book = {ep.rank: ep.address for ep in endpoints}
        for ep in endpoints:
            ep.set_peers(book)

        def cleanup():
            for ep in endpoints:
                ep.close()
    else:
        raise ValueError(f"unknown backend {backend!r}")

    results = [None] * world
    errors = [None] * world

    def runner(rank: int) -> None:
        try:
            results[rank] = fn(rank, Demux(endpoints[rank]))
        except BaseException as exc:  # noqa: BLE001 - reported to the caller
            errors[rank] = exc

    threads = [threading.Thread(target=runner, args=(r,), name=f"rank-{r}")
               for r in range(world)]
    try:
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout=timeout)
        alive = [t.name for t in threads if t.is_alive()]
        if alive:
            raise TimeoutError(f"rank threads still running: {alive}")
    finally:
        cleanup()
    for err in errors:
        if err is not None:
            raise err
    return results
