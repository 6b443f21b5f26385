"""Dataset catalogs and per-node sample assignment.

A sample is addressed as (file id, index within file). Nodes draw their
sample lists independently, uniformly without replacement within a node;
overlap across nodes is expected and is exactly what staging exploits.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CatalogFile:
    id: str
    nbytes: int
    samples: int

    def __post_init__(self):
        if not self.id:
            raise ValueError("empty file id")
        if self.nbytes <= 0 or self.samples <= 0:
            raise ValueError(f"{self.id}: sizes must be positive")


@dataclass(frozen=True)
class DatasetCatalog:
    files: tuple

    def __post_init__(self):
        ids = [f.id for f in self.files]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate file ids in catalog")

    @property
    def total_samples(self) -> int:
        return sum(f.samples for f in self.files)

    @property
    def total_bytes(self) -> int:
        return sum(f.nbytes for f in self.files)

    def file(self, file_id: str) -> CatalogFile:
        for f in self.files:
            if f.id == file_id:
                return f
        raise KeyError(file_id)

    def size_of(self, file_id: str) -> int:
        return self.file(file_id).nbytes

    @classmethod
    def from_scene_dir(cls, data_dir: str) -> "DatasetCatalog":
        """Catalog of a generated scene directory (one sample per file)."""
        with open(os.path.join(data_dir, "catalog.json")) as fh:
            meta = json.load(fh)
        return cls(tuple(CatalogFile(f["name"], f["bytes"], 1)
                         for f in meta["files"]))

    @classmethod
    def synthetic(cls, num_files: int, nbytes: int = 4096,
                  samples_per_file: int = 4, prefix: str = "f") -> "DatasetCatalog":
        return cls(tuple(CatalogFile(f"{prefix}{i:05d}", nbytes, samples_per_file)
                         for i in range(num_files)))


def assign_samples(catalog: DatasetCatalog, num_nodes: int, per_node: int,
                   seed: int) -> list:
    """Per-node lists of (file id, sample index), seeded-deterministic."""
    total = catalog.total_samples
    if per_node > total:
        raise ValueError(f"per_node {per_node} exceeds {total} samples")
    if num_nodes < 1:
        raise ValueError("num_nodes must be positive")

    starts = np.cumsum([0] + [f.samples for f in catalog.files])
    out = []
    for node in range(num_nodes):
        rng = np.random.default_rng((seed, node))
        picks = rng.choice(total, size=per_node, replace=False)
        fidx = np.searchsorted(starts, picks, side="right") - 1
        out.append([(catalog.files[fi].id, int(p - starts[fi]))
                    for fi, p in zip(fidx, picks)])
    return out


def files_needed(assignment) -> list:
    """Distinct file ids referenced by one node's assignment, sorted."""
    return sorted({fid for fid, _ in assignment})
