"""All-reduce algorithms over the transport.

ring_allreduce: reduce-scatter then all-gather over p near-equal chunks,
p-1 steps each. Every fully reduced chunk is produced at exactly one rank
and then propagated verbatim, so results are byte-identical across ranks.

hybrid_allreduce: (1) ring all-reduce among the G ranks of each node,
(2) the tensor is split into L shards and lane rank i ring-reduces shard i
across nodes, (3) each lane rank broadcasts its reduced shard node-locally.
Chunk frames carry the tensor name tagged with the stage ("g@s1") purely
for protocol checking; schedules use the base name.

Floating-point summation order differs between algorithms, so correctness
against the sequential oracle is a tolerance, while cross-rank equality of
any one algorithm's result is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import NamedTensor, RankTopology
from .transport import (MSG_CHUNK_DATA, Frame, ProtocolError, pack_chunk,
                        unpack_chunk)


class CollectiveError(Exception):
    pass


@dataclass(frozen=True)
class ReduceJob:
    tensor: NamedTensor
    op: str
    topology: RankTopology

    def __post_init__(self):
        if self.op not in ("sum", "mean"):
            raise ValueError(f"unknown reduce op {self.op!r}")


def oracle_reduce(inputs, op: str = "sum") -> np.ndarray:
    """Left-to-right sequential reduction in rank order; float64 reference."""
    arrays = [np.asarray(x).reshape(-1) for x in inputs]
    if not arrays:
        raise ValueError("no inputs")
    n = arrays[0].size
    if any(a.size != n for a in arrays):
        raise ValueError("input length mismatch")
    acc = arrays[0].astype(np.float64)
    for a in arrays[1:]:
        acc = acc + a
    if op == "mean":
        acc = acc / len(arrays)
    elif op != "sum":
        raise ValueError(f"unknown reduce op {op!r}")
    return acc


class ChunkChannel:
    """Send/receive tensor chunks through a demux with protocol checking."""

    def __init__(self, demux, timeout: float = 60.0):
        self._dx = demux
        self.rank = demux.rank
        self.timeout = timeout

    def send(self, dst: int, epoch: int, name: str, index: int, offset: int,
             values) -> None:
        payload = pack_chunk(epoch, name, index, offset, values)
        self._dx.send(dst, Frame(MSG_CHUNK_DATA, self.rank, payload))

    def recv(self, src: int, epoch: int, name: str, index: int,
             offset: int) -> np.ndarray:
        frame = self._dx.next_data(MSG_CHUNK_DATA, src, timeout=self.timeout)
        if frame is None:
            raise CollectiveError(
                f"rank {self.rank}: timed out waiting for {name!r} chunk {index} "
                f"from rank {src}")
        f_epoch, f_name, f_index, f_offset, values = unpack_chunk(frame.payload)
        if (f_epoch, f_name, f_index, f_offset) != (epoch, name, index, offset):
            raise ProtocolError(
                f"rank {self.rank}: expected {name!r} epoch {epoch} chunk "
                f"{index}@{offset} from {src}, got {f_name!r} epoch {f_epoch} "
                f"chunk {f_index}@{f_offset}")
        return values


def _chunk_bounds(n: int, parts: int) -> list:
    """near-equal split bounds, same convention as np.array_split"""
    base, extra = divmod(n, parts)
    bounds = []
    start = 0
    for i in range(parts):
        size = base + (1 if i < extra else 0)
        bounds.append((start, start + size))
        start += size
    return bounds


def ring_allreduce(chan: ChunkChannel, peers, name: str, values,
                   epoch: int = 0, op: str = "sum") -> np.ndarray:
    """All-reduce among `peers` (each rank calls with its own values)."""
    peers = list(peers)
    p = len(peers)
    if p < 1:
        raise CollectiveError("empty peer list")
    v = np.ascontiguousarray(values, dtype=np.float32).reshape(-1)
    if p == 1:
        out = v.copy()
        if op == "mean":
            pass  # mean over one input is the input
        return out
    me = peers.index(chan.rank)
    right = peers[(me + 1) % p]
    left = peers[(me - 1) % p]
    bounds = _chunk_bounds(v.size, p)
    chunks = [v[a:b] for a, b in bounds]

    for s in range(p - 1):
        si = (me - s) % p
        ri = (me - s - 1) % p
        chan.send(right, epoch, name, si, bounds[si][0], chunks[si])
        incoming = chan.recv(left, epoch, name, ri, bounds[ri][0])
        chunks[ri] = incoming + chunks[ri]

    for s in range(p - 1):
        si = (me + 1 - s) % p
        ri = (me - s) % p
        chan.send(right, epoch, name, si, bounds[si][0], chunks[si])
        chunks[ri] = chan.recv(left, epoch, name, ri, bounds[ri][0])

    out = np.concatenate(chunks) if chunks else v.copy()
    if op == "mean":
        out = out * np.float32(1.0 / p)
    elif op != "sum":
        raise ValueError(f"unknown reduce op {op!r}")
    return out


def local_broadcast(chan: ChunkChannel, owner: int, peers, name: str,
                    values, epoch: int = 0, index: int = 0,
                    offset: int = 0) -> np.ndarray:
    """Copy `values` from `owner` to every rank in `peers`, byte-identical."""
    peers = list(peers)
    if chan.rank == owner:
        v = np.ascontiguousarray(values, dtype=np.float32).reshape(-1)
        for dst in peers:
            if dst != owner:
                chan.send(dst, epoch, name, index, offset, v)
        return v.copy()
    return chan.recv(owner, epoch, name, index, offset)


def hybrid_allreduce(chan: ChunkChannel, topology: RankTopology, name: str,
                     values, epoch: int = 0, op: str = "sum") -> np.ndarray:
    """Three-stage node-aware all-reduce; result on every rank."""
    rank = chan.rank
    topology.check_rank(rank)
    node_peers = topology.node_peers(rank)
    slot = topology.slot_of(rank)
    lanes = topology.lanes
    world = topology.world_size

    v = np.ascontiguousarray(values, dtype=np.float32).reshape(-1)
    node_sum = ring_allreduce(chan, node_peers, f"{name}@s1", v, epoch, "sum")

    if topology.num_nodes > 1:
        # ceil split: lane i owns [i*c, min((i+1)*c, n))
        n = node_sum.size
        c = -(-n // lanes) if n else 0
        shard_bounds = [(min(i * c, n), min((i + 1) * c, n)) for i in range(lanes)]

        if slot < lanes:
            a, b = shard_bounds[slot]
            if b > a:
                reduced = ring_allreduce(chan, topology.lane_peers(slot),
                                         f"{name}@s2", node_sum[a:b], epoch, "sum")
                node_sum = node_sum.copy()
                node_sum[a:b] = reduced

        out = np.empty_like(node_sum)
        for lane in range(lanes):
            a, b = shard_bounds[lane]
            if b == a:
                continue
            owner = node_peers[lane]
            shard = node_sum[a:b] if owner == rank else None
            out[a:b] = local_broadcast(chan, owner, node_peers, f"{name}@s3",
                                       shard, epoch, index=lane, offset=a)
    else:
        out = node_sum

    if op == "mean":
        out = out * np.float32(1.0 / world)
    elif op != "sum":
        raise ValueError(f"unknown reduce op {op!r}")
    return out


def reduce_named(chan: ChunkChannel, job: ReduceJob, epoch: int = 0) -> NamedTensor:
    """Hybrid all-reduce of one named tensor; shape preserved."""
    out = hybrid_allreduce(chan, job.topology, job.tensor.name,
                           job.tensor.data, epoch=epoch, op=job.op)
    return NamedTensor(job.tensor.name, job.tensor.shape, out)
