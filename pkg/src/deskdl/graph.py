"""Typed operation graphs used for shape inference, FLOP counting and autodiff.

A graph is a DAG of :class:`OpNode` entries plus a set of named inputs.
Inputs play three roles: ``data`` (differentiation not required), ``param``
(trainable, gradients produced) and ``aux`` (labels, class weights and other
non-numeric-gradient operands).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .core import ShapeError

OP_KINDS = (
    "conv2d",
    "matmul",
    "bias_add",
    "relu",
    "concat",
    "softmax_ce",
    "avgpool",
    "upsample",
    "elementwise",
)

# attrs every node of a kind must carry; checked at graph build
_REQUIRED_ATTRS = {
    "conv2d": ("kh", "kw", "cin", "cout", "stride", "dilation", "padding"),
    "matmul": (),
    "bias_add": (),
    "relu": (),
    "concat": ("axis",),
    "softmax_ce": ("classes",),
    "avgpool": ("window",),
    "upsample": ("factor",),
    "elementwise": ("fn",),
}

_ELEMENTWISE_FNS = ("add", "mul", "scale")


@dataclass(frozen=True)
class OpNode:
    name: str
    kind: str
    inputs: tuple
    attrs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OP_KINDS:
            raise ValueError(f"unknown op kind {self.kind!r}")
        missing = [a for a in _REQUIRED_ATTRS[self.kind] if a not in self.attrs]
        if missing:
            raise ValueError(f"{self.name}: {self.kind} missing attrs {missing}")
        if self.kind == "conv2d":
            a = self.attrs
            if a["padding"] != "same":
                raise ValueError(f"{self.name}: only 'same' padding is supported")
            if min(a["kh"], a["kw"], a["cin"], a["cout"], a["stride"], a["dilation"]) < 1:
                raise ValueError(f"{self.name}: conv2d attrs must be positive")
        if self.kind == "elementwise" and self.attrs["fn"] not in _ELEMENTWISE_FNS:
            raise ValueError(f"{self.name}: elementwise fn must be one of {_ELEMENTWISE_FNS}")


class OpGraph:
    """DAG of typed numeric operations.

    Nodes are appended in topological order by construction: every input of
    a new node must already exist, which rules out cycles.
    """

    def __init__(self):
        self.inputs = {}           # name -> role in {"data", "param", "aux"}
        self.nodes = []            # OpNode, topological order
        self._names = set()

    def add_input(self, name: str, role: str = "data") -> str:
        if role not in ("data", "param", "aux"):
            raise ValueError(f"bad input role {role!r}")
        self._claim(name)
        self.inputs[name] = role
        return name

    def add_node(self, node: OpNode) -> str:
        self._claim(node.name)
        for src in node.inputs:
            if src not in self._names or src == node.name:
                raise ValueError(f"{node.name}: unknown input {src!r}")
        self.nodes.append(node)
        return node.name

    def _claim(self, name: str) -> None:
        if not name:
            raise ValueError("empty node name")
        if name in self._names:
            raise ValueError(f"duplicate graph name {name!r}")
        self._names.add(name)

    def param_names(self) -> list:
        return [n for n, role in self.inputs.items() if role == "param"]

    def node(self, name: str) -> OpNode:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    # -- convenience builders -------------------------------------------

    def conv2d(self, x, w, name, kh, kw, cin, cout, stride=1, dilation=1):
        return self.add_node(OpNode(name, "conv2d", (x, w), dict(
            kh=kh, kw=kw, cin=cin, cout=cout, stride=stride,
            dilation=dilation, padding="same")))

    def matmul(self, a, b, name):
        return self.add_node(OpNode(name, "matmul", (a, b)))

    def bias_add(self, x, b, name):
        return self.add_node(OpNode(name, "bias_add", (x, b)))

    def relu(self, x, name):
        return self.add_node(OpNode(name, "relu", (x,)))

    def concat(self, xs, name, axis=1):
        return self.add_node(OpNode(name, "concat", tuple(xs), dict(axis=axis)))

    def avgpool(self, x, name, window=2):
        return self.add_node(OpNode(name, "avgpool", (x,), dict(window=window)))

    def upsample(self, x, name, factor=2):
        return self.add_node(OpNode(name, "upsample", (x,), dict(factor=factor)))

    def elementwise(self, xs, name, fn, alpha=1.0):
        return self.add_node(OpNode(name, "elementwise", tuple(xs), dict(fn=fn, alpha=alpha)))

    def softmax_ce(self, logits, labels, class_weights, name, classes=3):
        return self.add_node(OpNode(name, "softmax_ce", (logits, labels, class_weights),
                                    dict(classes=classes)))


def same_pad_extent(extent: int, stride: int) -> int:
    """Output extent of a 'same'-padded conv or pool: ceil(extent / stride)."""
    return -(-extent // stride)


def infer_shapes(graph: OpGraph, input_shapes: dict) -> dict:
    """Compute every node's output shape from the graph-input shapes.

    Deterministic and total on valid graphs; raises :class:`ShapeError` on a
    missing input, incompatible extents or a non-positive computed extent.
    """
    shapes = {}
    for name in graph.inputs:
        if name not in input_shapes:
            raise ShapeError(f"missing shape for graph input {name!r}")
        shapes[name] = tuple(int(v) for v in input_shapes[name])

    for node in graph.nodes:
        ins = [shapes[i] for i in node.inputs]
        shapes[node.name] = _node_output_shape(node, ins)
        if any(e <= 0 for e in shapes[node.name]):
            raise ShapeError(f"{node.name}: non-positive extent {shapes[node.name]}")
    return shapes


def _node_output_shape(node: OpNode, ins: list) -> tuple:
    kind = node.kind
    if kind == "conv2d":
        x, w = ins
        a = node.attrs
        if len(x) != 4 or x[1] != a["cin"]:
            raise ShapeError(f"{node.name}: conv input {x} mismatches cin={a['cin']}")
        if tuple(w) != (a["cout"], a["cin"], a["kh"], a["kw"]):
            raise ShapeError(f"{node.name}: weight shape {w} mismatches attrs")
        s = a["stride"]
        return (x[0], a["cout"], same_pad_extent(x[2], s), same_pad_extent(x[3], s))
    if kind == "matmul":
        a, b = ins
        if len(b) != 2 or a[-1] != b[0]:
            raise ShapeError(f"{node.name}: matmul {a} @ {b}")
        return tuple(a[:-1]) + (b[1],)
    if kind == "bias_add":
        x, b = ins
        if len(b) != 1 or b[0] != x[1]:
            raise ShapeError(f"{node.name}: bias {b} does not match channels of {x}")
        return tuple(x)
    if kind in ("relu",):
        return tuple(ins[0])
    if kind == "concat":
        axis = node.attrs["axis"]
        base = list(ins[0])
        for other in ins[1:]:
            if len(other) != len(base):
                raise ShapeError(f"{node.name}: concat rank mismatch")
            for d, (u, v) in enumerate(zip(base, other)):
                if d == axis:
                    continue
                if u != v:
                    raise ShapeError(f"{node.name}: concat extent mismatch on axis {d}")
            base[axis] += other[axis]
        return tuple(base)
    if kind == "softmax_ce":
        return (1,)
    if kind == "avgpool":
        x = ins[0]
        k = node.attrs["window"]
        if x[2] % k or x[3] % k:
            raise ShapeError(f"{node.name}: extent {x[2]}x{x[3]} not divisible by {k}")
        return (x[0], x[1], x[2] // k, x[3] // k)
    if kind == "upsample":
        x = ins[0]
        f = node.attrs["factor"]
        return (x[0], x[1], x[2] * f, x[3] * f)
    if kind == "elementwise":
        if node.attrs["fn"] in ("add", "mul"):
            a, b = ins
            if tuple(a) != tuple(b):
                raise ShapeError(f"{node.name}: elementwise operands {a} vs {b}")
        return tuple(ins[0])
    raise AssertionError(kind)


def output_elements(shape: tuple) -> int:
    return math.prod(shape)
