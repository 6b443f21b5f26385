"""Bounded prefetch pipeline: W reader workers ahead of one consumer.

Workers are independent execution contexts (own thread, own source
iterator, own file handles when loading from disk); they only meet at the
bounded queue. Items may be callables, evaluated inside the worker, which
is where read+decode cost lives. The consumption log records how long the
consumer waited for each item, giving the post-warmup stall fraction.
"""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass


class PipelineError(Exception):
    pass


class CheckedQueue(queue.Queue):
    """Bounded queue asserting its own occupancy invariant on every put."""

    def _put(self, item):
        assert len(self.queue) < self.maxsize, "queue occupancy exceeded capacity"
        super()._put(item)


_DONE = object()


@dataclass
class PipelineLog:
    items: list        # (value, wait_seconds, dequeue_timestamp)
    duration: float
    workers: int
    capacity: int

    @property
    def values(self) -> list:
        return [v for v, _, _ in self.items]

    def stall_fraction(self, skip: int = 0) -> float:
        """Waited time / elapsed time, ignoring the first `skip` items."""
        tail = self.items[skip:]
        if not tail:
            return 0.0
        waited = sum(w for _, w, _ in tail)
        start = tail[0][2] - tail[0][1]
        elapsed = tail[-1][2] - start
        return waited / elapsed if elapsed > 0 else 0.0

    def to_csv(self) -> str:
        lines = ["index,wait_seconds,timestamp"]
        lines.extend(f"{i},{w:.6f},{ts:.6f}"
                     for i, (_, w, ts) in enumerate(self.items))
        return "\n".join(lines) + "\n"


def pipeline_run(source, capacity: int = 4, workers: int = 4,
                 consume=None) -> PipelineLog:
    """Drive `source` through W workers and a bounded queue to one consumer.

    `source` is either a sequence (dealt round-robin to workers) or a
    callable worker_index -> iterator, for sources that must be opened per
    worker. `consume` simulates per-item consumer work.
    """
    if capacity < 1 or workers < 1:
        raise ValueError("capacity and workers must be positive")

    if callable(source):
        feeds = [source(w) for w in range(workers)]
    else:
        items = list(source)
        feeds = [items[w::workers] for w in range(workers)]

    q = CheckedQueue(maxsize=capacity)

    def worker(feed):
        try:
            for item in feed:
                q.put(item() if callable(item) else item)
        except Exception as exc:  # noqa: BLE001 - surfaced after draining
            q.put(PipelineError(f"reader worker failed: {exc!r}"))
        finally:
            q.put(_DONE)

    threads = [threading.Thread(target=worker, args=(feed,), daemon=True,
                                name=f"reader-{i}")
               for i, feed in enumerate(feeds)]
    t0 = time.monotonic()
    for t in threads:
        t.start()

    log = []
    failure = None
    open_workers = workers
    while open_workers:
        wait_start = time.monotonic()
        item = q.get()
        now = time.monotonic()
        if item is _DONE:
            open_workers -= 1
            continue
        if isinstance(item, PipelineError):
            failure = failure or item
            continue
        log.append((item, now - wait_start, now))
        if consume is not None:
            consume(item)

    for t in threads:
        t.join()
    if failure is not None:
        raise failure
    return PipelineLog(items=log, duration=time.monotonic() - t0,
                       workers=workers, capacity=capacity)
