"""Single-consumer frame demultiplexer.

Collectives need the next chunk from a specific peer while control frames
keep arriving; the demux stashes whatever else comes in so nothing is lost
or reordered. Must only be driven from one consumer thread per endpoint.
"""

from __future__ import annotations

import time
from collections import deque

from .frame import (MSG_CHUNK_DATA, MSG_CONTROL, MSG_FILE_TRANSFER,
                    MSG_READINESS, MSG_SCHEDULE, Frame)

_CONTROL_TYPES = (MSG_READINESS, MSG_SCHEDULE, MSG_CONTROL)


class Demux:
    def __init__(self, endpoint):
        self._ep = endpoint
        self.rank = endpoint.rank
        self._control = deque()
        self._data = {}

    def send(self, dst: int, frame: Frame) -> None:
        self._ep.send(dst, frame)

    def _stash(self, frame: Frame) -> None:
        if frame.msg_type in _CONTROL_TYPES:
            self._control.append(frame)
        else:
            key = (frame.msg_type, frame.src_rank)
            self._data.setdefault(key, deque()).append(frame)

    def _pump(self, timeout: float) -> bool:
        frame = self._ep.recv(timeout=timeout)
        if frame is None:
            return False
        self._stash(frame)
        return True

    def next_control(self, timeout: float = 0.0):
        """Next readiness/schedule/control frame in arrival order, else None."""
        deadline = time.monotonic() + timeout
        while not self._control:
            remain = deadline - time.monotonic()
            if remain < 0:
                remain = 0.0
            if not self._pump(remain):
                if time.monotonic() >= deadline:
                    return None
        return self._control.popleft()

    def next_data(self, msg_type: int, src: int, timeout: float = 30.0):
        """Next chunk/file frame from one peer, else None on timeout."""
        if msg_type not in (MSG_CHUNK_DATA, MSG_FILE_TRANSFER):
            raise ValueError(f"not a data frame type: {msg_type}")
        key = (msg_type, src)
        deadline = time.monotonic() + timeout
        while True:
            bucket = self._data.get(key)
            if bucket:
                return bucket.popleft()
            remain = deadline - time.monotonic()
            if remain < 0:
                remain = 0.0
            if not self._pump(remain) and time.monotonic() >= deadline:
                return None

    def pending_counts(self) -> dict:
        out = {"control": len(self._control)}
        for key, bucket in self._data.items():
            if bucket:
                out[key] = len(bucket)
        return out
