"""In-process transport: one thread per rank, queues as mailboxes.

Frames move as objects (payload bytes identical to the wire payload); only
the 9-byte header skips serialization. Optional constant delivery latency
runs through a single timer thread, which preserves per-pair FIFO because
due times are monotone per pair.
"""

from __future__ import annotations

import heapq
import itertools
import queue
import threading
import time

from .frame import Frame, TransportClosed, TransportError


class InprocFabric:
    def __init__(self, latency_s: float = 0.0):
        if latency_s < 0:
            raise ValueError("latency must be non-negative")
        self._latency = latency_s
        self._boxes = {}
        self._lock = threading.Lock()
        self._closed = False
        self._timer = None
        if latency_s > 0:
            self._timer = _DelayDelivery(self)

    def register(self, rank: int) -> "InprocEndpoint":
        # queue.Queue, not SimpleQueue: SimpleQueue's timed get on this
        # interpreter can turn an expired deadline into an untimed wait after
        # a stale wakeup token (put with no parked getter), parking the
        # consumer forever. Queue's timed wait has no recompute loop.
        with self._lock:
            if rank in self._boxes:
                raise TransportError(f"rank {rank} already registered")
            self._boxes[rank] = queue.Queue()
        return InprocEndpoint(self, rank)

    def _deliver(self, dst: int, frame: Frame) -> None:
        try:
            box = self._boxes[dst]
        except KeyError:
            raise TransportError(f"unknown destination rank {dst}") from None
        box.put(frame)

    def _send(self, dst: int, frame: Frame) -> None:
        if self._closed:
            raise TransportClosed("fabric closed")
        if self._timer is not None:
            self._timer.submit(time.monotonic() + self._latency, dst, frame)
        else:
            self._deliver(dst, frame)

    def close(self) -> None:
        self._closed = True
        if self._timer is not None:
            self._timer.stop()


class InprocEndpoint:
    def __init__(self, fabric: InprocFabric, rank: int):
        self._fabric = fabric
        self.rank = rank
        self._closed = False

    def send(self, dst: int, frame: Frame) -> None:
        if self._closed:
            raise TransportClosed(f"endpoint {self.rank} closed")
        self._fabric._send(dst, frame)

    def recv(self, timeout: float | None = None):
        """Next frame in arrival order, or None when the timeout elapses."""
        if self._closed:
            raise TransportClosed(f"endpoint {self.rank} closed")
        box = self._fabric._boxes[self.rank]
        try:
            if timeout is not None and timeout <= 0:
                return box.get_nowait()
            return box.get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self) -> None:
        self._closed = True


class _DelayDelivery:
    """Single timer thread delivering frames at their due times."""

    def __init__(self, fabric: InprocFabric):
        self._fabric = fabric
        self._heap = []
        self._seq = itertools.count()
        self._cv = threading.Condition()
        self._stop = False
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name="inproc-delay")
        self._thread.start()

    def submit(self, due: float, dst: int, frame: Frame) -> None:
        with self._cv:
            heapq.heappush(self._heap, (due, next(self._seq), dst, frame))
            self._cv.notify()

    def stop(self) -> None:
        with self._cv:
            self._stop = True
            self._cv.notify()
        self._thread.join(timeout=5)

    def _run(self) -> None:
        while True:
            with self._cv:
                while not self._stop and not self._heap:
                    self._cv.wait()
                if self._stop:
                    return
                due, _, dst, frame = self._heap[0]
                wait = due - time.monotonic()
                if wait > 0:
                    self._cv.wait(timeout=wait)
                    continue
                heapq.heappop(self._heap)
            self._fabric._deliver(dst, frame)
