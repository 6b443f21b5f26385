"""Shared domain types: named tensors and the rank topology."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


class ShapeError(ValueError):
    """A tensor or graph shape constraint was violated."""


@dataclass(frozen=True)
class NamedTensor:
    """Flat float32 buffer with a shape and a stable name.

    The name identifies the tensor within one training step's collective
    set: it must be unique per step and spelled identically on every rank.
    """

    name: str
    shape: tuple
    data: np.ndarray

    def __post_init__(self):
        if not self.name:
            raise ValueError("tensor name must be non-empty")
        shape = tuple(int(s) for s in self.shape)
        if not shape or any(s <= 0 for s in shape):
            raise ShapeError(f"{self.name}: invalid shape {shape}")
        data = np.ascontiguousarray(self.data, dtype=np.float32).reshape(-1)
        if data.size != math.prod(shape):
            raise ShapeError(f"{self.name}: data length {data.size} != prod{shape}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", data)

    @property
    def size(self) -> int:
        return self.data.size

    def reshaped(self) -> np.ndarray:
        return self.data.reshape(self.shape)


@dataclass(frozen=True)
class RankTopology:
    """Mapping of global ranks onto nodes, local slots and inter-node lanes.

    Ranks are numbered node-major: rank = node * local_ranks + slot.
    The lowest ``lanes`` slots on every node double as inter-node
    communication lanes; the control tree fan-out is ``control_radix``.
    """

    num_nodes: int
    local_ranks: int = 6
    lanes: int = 4
    control_radix: int = 4

    def __post_init__(self):
        if self.num_nodes < 1 or self.local_ranks < 1:
            raise ValueError("num_nodes and local_ranks must be positive")
        if not 1 <= self.lanes <= self.local_ranks:
            raise ValueError(f"lanes must be in 1..{self.local_ranks}")
        if self.control_radix < 2:
            raise ValueError("control_radix must be >= 2")

    @property
    def world_size(self) -> int:
        return self.num_nodes * self.local_ranks

    def check_rank(self, rank: int) -> None:
        if not 0 <= rank < self.world_size:
            raise ValueError(f"rank {rank} out of range [0, {self.world_size})")

    def node_of(self, rank: int) -> int:
        self.check_rank(rank)
        return rank // self.local_ranks

    def slot_of(self, rank: int) -> int:
        self.check_rank(rank)
        return rank % self.local_ranks

    def rank_of(self, node: int, slot: int) -> int:
        rank = node * self.local_ranks + slot
        self.check_rank(rank)
        return rank

    def node_peers(self, rank: int) -> list:
        """All ranks on the same node as ``rank``, in slot order."""
        node = self.node_of(rank)
        return [node * self.local_ranks + s for s in range(self.local_ranks)]

    def lane_peers(self, slot: int) -> list:
        """The rank occupying ``slot`` on every node, in node order."""
        if not 0 <= slot < self.lanes:
            raise ValueError(f"slot {slot} is not a lane (lanes={self.lanes})")
        return [n * self.local_ranks + slot for n in range(self.num_nodes)]


def topology_map(topology: RankTopology, rank: int):
    """Resolve a global rank to (node, slot, lane role).

    The lane role is the lane index for the lowest ``lanes`` slots on each
    node and None for the remaining slots.
    """
    node = topology.node_of(rank)
    slot = topology.slot_of(rank)
    lane: Optional[int] = slot if slot < topology.lanes else None
    return node, slot, lane
