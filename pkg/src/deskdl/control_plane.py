"""Hierarchical readiness aggregation and schedule broadcast.

Ranks form a radix-r tree (heap numbering, root 0). Each rank reports a
tensor upward once its own mark and all child subtrees are in; the root
batches globally ready tensors into schedules that ranks relay to children
before executing. Every message carries the step epoch so stragglers from
finished steps are rejected; messages from a future epoch are buffered until
the local step advances.

Coordinator messages are plain tuples, kept off the wire:
    ("r", epoch, name)    readiness
    ("s", epoch, names)   schedule, names a tuple
The transport layer owns the byte encoding of both.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass


class ControlPlaneError(Exception):
    pass


@dataclass(frozen=True)
class ControlTree:
    rank_count: int
    radix: int
    parent: tuple
    children: tuple

    def children_of(self, rank: int) -> tuple:
        return self.children[rank]

    def parent_of(self, rank: int):
        return self.parent[rank]

    @property
    def depth(self) -> int:
        """Longest root-to-leaf edge count."""
        d = 0
        rank = self.rank_count - 1
        while rank > 0:
            rank = self.parent[rank]
            d += 1
        return d


def build_tree(rank_count: int, radix: int) -> ControlTree:
    """Deterministic breadth-first tree: children(k) = k*r+1 .. k*r+r."""
    if rank_count < 1:
        raise ValueError("rank_count must be positive")
    if radix < 2:
        raise ValueError("radix must be at least 2")
    parent = [None] * rank_count
    children = []
    for k in range(rank_count):
        lo = k * radix + 1
        kids = tuple(range(lo, min(lo + radix, rank_count)))
        children.append(kids)
        for c in kids:
            parent[c] = k
    return ControlTree(rank_count, radix, tuple(parent), tuple(children))


class Coordinator:
    """Per-rank control state machine; transport-free.

    All mutating calls return a list of (dst_rank, message) to send. The
    owner forwards them, feeds incoming messages to handle(), and reads
    take_executable() for tensors cleared to start their collectives, in
    the globally agreed order.
    """

    __slots__ = ("tree", "rank", "epoch", "_kids", "_parent", "_self_ready",
                 "_child_ready", "_done", "_root_pending", "_executable",
                 "executed", "stale_dropped", "_future")

    def __init__(self, tree: ControlTree, rank: int):
        self.tree = tree
        self.rank = rank
        self.epoch = 0
        self._kids = tree.children_of(rank)
        self._parent = tree.parent_of(rank)
        self._self_ready = set()
        self._child_ready = {}
        self._done = set()
        self._root_pending = []
        self._executable = deque()
        self.executed = []
        self.stale_dropped = 0
        self._future = deque()

    # -- local events -------------------------------------------------------

    def mark_ready(self, name: str) -> list:
        if name in self._self_ready:
            raise ControlPlaneError(
                f"rank {self.rank}: duplicate mark for {name!r} in epoch {self.epoch}")
        self._self_ready.add(name)
        return self._check_complete(name)

    def _check_complete(self, name: str) -> list:
        if name in self._done or name not in self._self_ready:
            return []
        ready_kids = self._child_ready.get(name)
        have = len(ready_kids) if ready_kids else 0
        if have < len(self._kids):
            return []
        self._done.add(name)
        if self._parent is None:
            self._root_pending.append(name)
            return []
        return [(self._parent, ("r", self.epoch, name))]

    def flush(self) -> list:
        """Root only: batch every quorum-complete tensor into one schedule."""
        if self._parent is not None:
            raise ControlPlaneError("flush is a root-only operation")
        if not self._root_pending:
            return []
        names = tuple(self._root_pending)
        self._root_pending = []
        self._executable.extend(names)
        self.executed.extend(names)
        msg = ("s", self.epoch, names)
        return [(kid, msg) for kid in self._kids]

    def has_pending_schedule(self) -> bool:
        return bool(self._root_pending)

    # -- message handling ------------------------------------------------------

    def handle(self, src: int, msg: tuple) -> list:
        epoch = msg[1]
        if epoch != self.epoch:
            if epoch < self.epoch:
                self.stale_dropped += 1
                return []
            self._future.append((src, msg))
            return []
        kind = msg[0]
        if kind == "r":
            return self._handle_readiness(src, msg[2])
        if kind == "s":
            return self._handle_schedule(src, msg[2])
        raise ControlPlaneError(f"unknown control message kind {kind!r}")

    def _handle_readiness(self, src: int, name: str) -> list:
        if src not in self._kids:
            raise ControlPlaneError(
                f"rank {self.rank}: readiness from non-child {src}")
        kids = self._child_ready.setdefault(name, set())
        if src in kids:
            raise ControlPlaneError(
                f"rank {self.rank}: duplicate child readiness for {name!r} from {src}")
        kids.add(src)
        return self._check_complete(name)

    def _handle_schedule(self, src: int, names: tuple) -> list:
        if src != self._parent:
            raise ControlPlaneError(
                f"rank {self.rank}: schedule from non-parent {src}")
        for name in names:
            if name not in self._self_ready:
                raise ControlPlaneError(
                    f"rank {self.rank}: scheduled tensor {name!r} never registered")
        # relay first, then record for execution
        msg = ("s", self.epoch, names)
        out = [(kid, msg) for kid in self._kids]
        self._executable.extend(names)
        self.executed.extend(names)
        return out

    def take_executable(self) -> list:
        out = list(self._executable)
        self._executable.clear()
        return out

    # -- step lifecycle -------------------------------------------------------

    def advance_epoch(self) -> list:
        """Start the next step; replays any buffered future-epoch messages."""
        self.epoch += 1
        self._self_ready.clear()
        self._child_ready.clear()
        self._done.clear()
        self._root_pending.clear()
        self.executed.clear()
        out = []
        pending = [item for item in self._future]
        self._future.clear()
        for src, msg in pending:
            out.extend(self.handle(src, msg))
        return out


# -- event-interleaving simulator ------------------------------------------


@dataclass
class SimResult:
    executed: list          # per-rank executed tensor order
    sent: list              # per-rank dict name -> control messages sent
    received: list          # per-rank dict name -> control messages received
    schedule_flushes: int
    events: int

    def max_sent(self) -> int:
        return max((max(d.values()) for d in self.sent if d), default=0)

    def max_received(self) -> int:
        return max((max(d.values()) for d in self.received if d), default=0)


def simulate(rank_count: int, radix: int, tensor_names, seed: int) -> SimResult:
    """Run one full step under a random event interleaving.

    Events: per-rank readiness marks (each rank marks in its own random
    permutation), per-channel FIFO deliveries, and root schedule flushes.
    The scheduler picks uniformly among runnable events, so delivery order
    across channels and flush timing are adversarially shuffled while
    per-pair FIFO is preserved. Raises on deadlock (nothing runnable before
    every rank executed every tensor).
    """
    names = list(tensor_names)
    tree = build_tree(rank_count, radix)
    rng = random.Random(seed)
    coords = [Coordinator(tree, r) for r in range(rank_count)]

    perms = []
    for r in range(rank_count):
        p = names[:]
        rng.shuffle(p)
        perms.append(p)
    mark_pos = [0] * rank_count

    channels = {}
    sent = [dict() for _ in range(rank_count)]
    received = [dict() for _ in range(rank_count)]
    flushes = 0
    flush_queued = False

    # runnable: ("m", rank) next mark, ("c", src, dst) channel head, ("f",) flush
    runnable = [("m", r) for r in range(rank_count)]

    def post(src: int, outgoing) -> None:
        nonlocal flush_queued
        for dst, msg in outgoing:
            tensors = (msg[2],) if msg[0] == "r" else msg[2]
            for t in tensors:
                sent[src][t] = sent[src].get(t, 0) + 1
            chan = channels.get((src, dst))
            if chan is None:
                chan = channels[(src, dst)] = deque()
            if not chan:
                runnable.append(("c", src, dst))
            chan.append(msg)
        if coords[0].has_pending_schedule() and not flush_queued:
            flush_queued = True
            runnable.append(("f",))

    events = 0
    total = len(names) * rank_count
    executed_total = 0
    while executed_total < total:
        if not runnable:
            raise AssertionError(
                f"deadlock: {executed_total}/{total} executions after {events} events")
        i = rng.randrange(len(runnable))
        ev = runnable[i]
        last = runnable.pop()
        if i < len(runnable):
            runnable[i] = last
        events += 1

        if ev[0] == "m":
            r = ev[1]
            name = perms[r][mark_pos[r]]
            mark_pos[r] += 1
            if mark_pos[r] < len(names):
                runnable.append(ev)
            before = len(coords[r].executed)
            post(r, coords[r].mark_ready(name))
            executed_total += len(coords[r].executed) - before
        elif ev[0] == "c":
            _, src, dst = ev
            chan = channels[(src, dst)]
            msg = chan.popleft()
            if chan:
                runnable.append(ev)
            tensors = (msg[2],) if msg[0] == "r" else msg[2]
            for t in tensors:
                received[dst][t] = received[dst].get(t, 0) + 1
            before = len(coords[dst].executed)
            post(dst, coords[dst].handle(src, msg))
            executed_total += len(coords[dst].executed) - before
        else:
            flush_queued = False
            flushes += 1
            before = len(coords[0].executed)
            post(0, coords[0].flush())
            executed_total += len(coords[0].executed) - before

    return SimResult(executed=[c.executed[:] for c in coords], sent=sent,
                     received=received, schedule_flushes=flushes, events=events)
