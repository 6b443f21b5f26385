"""Graph-traversal FLOP counting and throughput conversion.

Counting rules (multiplies and additions both count):
  conv2d      2 * Kh * Kw * Hout * Wout * Cin * Cout * N   (direct / implicit GEMM)
  matmul      2 * M * K * P * batch
  bias_add, relu, elementwise   1 per output element
  concat, upsample              0 (copies)
  avgpool     window^2 per output element (documented assumption)
  softmax_ce  5 per logit element (sub-max, exp, sum-div, log, weight-mul)

Optimizer FLOPs are excluded; the report carries a flag saying so.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .graph import OpGraph, infer_shapes

SOFTMAX_CE_FLOPS_PER_LOGIT = 5


@dataclass(frozen=True)
class FlopReport:
    per_node: dict
    by_kind: dict
    batch: int
    includes_optimizer: bool = False
    notes: tuple = ("optimizer FLOPs excluded: graph forward costs only",)

    @property
    def total(self) -> int:
        return sum(self.per_node.values())

    @property
    def per_sample(self) -> float:
        return self.total / self.batch

    def to_dict(self) -> dict:
        return {
            "total_flops": self.total,
            "per_sample_flops": self.per_sample,
            "batch": self.batch,
            "by_kind": dict(self.by_kind),
            "per_node": dict(self.per_node),
            "includes_optimizer": self.includes_optimizer,
            "notes": list(self.notes),
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)


def node_flops(node, out_shape: tuple, in_shapes: list) -> int:
    kind = node.kind
    out_elems = math.prod(out_shape)
    if kind == "conv2d":
        a = node.attrs
        # out_shape = (N, Cout, Hout, Wout); one FMA per tap = 2 FLOPs
        return 2 * a["kh"] * a["kw"] * a["cin"] * out_elems
    if kind == "matmul":
        k = in_shapes[0][-1]
        return 2 * k * out_elems
    if kind in ("bias_add", "relu", "elementwise"):
        return out_elems
    if kind in ("concat", "upsample"):
        return 0
    if kind == "avgpool":
        return node.attrs["window"] ** 2 * out_elems
    if kind == "softmax_ce":
        return SOFTMAX_CE_FLOPS_PER_LOGIT * math.prod(in_shapes[0])
    raise ValueError(f"no FLOP rule for op kind {kind!r}")


def count_graph(graph: OpGraph, input_shapes: dict, batch: int) -> FlopReport:
    """Count forward FLOPs for every node; per-sample figures divide by ``batch``."""
    if batch < 1:
        raise ValueError("batch must be positive")
    shapes = infer_shapes(graph, input_shapes)
    per_node = {}
    by_kind = {}
    for node in graph.nodes:
        n = node_flops(node, shapes[node.name], [shapes[s] for s in node.inputs])
        per_node[node.name] = n
        by_kind[node.kind] = by_kind.get(node.kind, 0) + n
    return FlopReport(per_node=per_node, by_kind=by_kind, batch=batch)


def conv2d_flops(kh: int, kw: int, hout: int, wout: int, cin: int, cout: int,
                 batch: int) -> int:
    """Closed-form convolution count, for spot checks against count_graph."""
    return 2 * kh * kw * hout * wout * cin * cout * batch


def flops_to_rate(per_sample_flops: float, samples_per_second: float) -> float:
    """Sustained FLOP/s = processed samples per second x FLOPs per sample."""
    if samples_per_second < 0:
        raise ValueError("rate must be non-negative")
    return per_sample_flops * samples_per_second


# One training step costs roughly the forward pass plus the two backward
# convolution passes (grad wrt input and grad wrt weights), each about the
# size of the forward pass. A documented estimate, not a measured count.
TRAIN_FLOP_FACTOR = 3


def train_flops_per_sample(report: FlopReport) -> float:
    """Per-sample forward+backward estimate: TRAIN_FLOP_FACTOR x forward."""
    return report.per_sample * TRAIN_FLOP_FACTOR
