"""Tape-based forward and reverse execution of operation graphs.

The executor is dtype-generic: float32 for training, float64 for the
finite-difference checks in the test suite. Gradients follow the usual
vector-Jacobian rules; only inputs reachable from the requested ``wrt``
set get a gradient computed, everything else is skipped.
"""

from __future__ import annotations

import numpy as np

from ..graph import OpGraph, OpNode
from . import kernels
from .loss import weighted_ce_loss


class Tape:
    """Values and per-node backward caches recorded by one forward pass."""

    __slots__ = ("values", "caches", "order")

    def __init__(self):
        self.values = {}
        self.caches = {}
        self.order = []


def needed_nodes(graph: OpGraph, targets) -> list:
    """Nodes (topological order) in the ancestor closure of ``targets``."""
    want = set(targets)
    keep = []
    for node in reversed(graph.nodes):
        if node.name in want:
            keep.append(node)
            want.update(node.inputs)
    missing = [t for t in targets if t not in {n.name for n in keep} | set(graph.inputs)]
    if missing:
        raise KeyError(f"unknown forward targets {missing}")
    keep.reverse()
    return keep


def run_forward(graph: OpGraph, values: dict, targets=None):
    """Execute the graph (or the closure of ``targets``) on ``values``.

    ``values`` maps every required graph input to an ndarray. Returns
    ``(outputs, tape)`` where outputs holds the target arrays and the tape
    holds every intermediate for a later :func:`run_backward`.
    """
    if targets is None:
        targets = [n.name for n in graph.nodes]
    nodes = needed_nodes(graph, targets)

    tape = Tape()
    produced = {n.name for n in nodes}
    for node in nodes:
        for src in node.inputs:
            if src not in produced and src not in values:
                raise KeyError(f"{node.name}: no value for input {src!r}")
    tape.values.update({k: np.asarray(v) for k, v in values.items()})

    for node in nodes:
        ins = [tape.values[s] for s in node.inputs]
        out, cache = _forward_one(node, ins)
        tape.values[node.name] = out
        tape.caches[node.name] = cache
        tape.order.append(node)

    return {t: tape.values[t] for t in targets}, tape


def run_backward(graph: OpGraph, tape: Tape, seed_name: str, wrt=None) -> dict:
    """Reverse sweep from ``seed_name``; returns grads for the ``wrt`` names.

    ``wrt`` defaults to the graph's parameter inputs. The seed gradient is
    all-ones, so seeding from a non-scalar node differentiates its sum.
    """
    if wrt is None:
        wrt = graph.param_names()
    if seed_name not in tape.values:
        raise KeyError(f"seed {seed_name!r} was not computed on this tape")

    # names whose gradient must flow: wrt plus every node fed by them
    live = set(wrt)
    for node in tape.order:
        if any(s in live for s in node.inputs):
            live.add(node.name)

    grads = {seed_name: np.ones_like(tape.values[seed_name])}
    for node in reversed(tape.order):
        gout = grads.pop(node.name, None)
        if gout is None or node.name not in live:
            continue
        ins = [tape.values[s] for s in node.inputs]
        gins = _backward_one(node, ins, tape.values[node.name],
                             tape.caches[node.name], gout,
                             [s in live for s in node.inputs])
        for src, g in zip(node.inputs, gins):
            if g is None:
                continue
            if src in grads:
                grads[src] = grads[src] + g
            else:
                grads[src] = g
    return {name: grads.get(name) for name in wrt}


# -- per-op rules ---------------------------------------------------------


def _forward_one(node: OpNode, ins):
    kind = node.kind
    a = node.attrs
    if kind == "conv2d":
        x, w = ins
        out, cache = kernels.conv2d_forward(x, w, stride=a["stride"],
                                            dilation=a["dilation"])
        return out, cache
    if kind == "matmul":
        return ins[0] @ ins[1], None
    if kind == "bias_add":
        x, b = ins
        shape = [1] * x.ndim
        shape[1] = b.shape[0]
        return x + b.reshape(shape), None
    if kind == "relu":
        return np.maximum(ins[0], 0), None
    if kind == "concat":
        return np.concatenate(ins, axis=a["axis"]), None
    if kind == "softmax_ce":
        return _softmax_ce_forward(ins[0], ins[1], ins[2])
    if kind == "avgpool":
        x = ins[0]
        k = a["window"]
        n, c, h, w = x.shape
        out = x.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))
        return out, None
    if kind == "upsample":
        f = a["factor"]
        return np.repeat(np.repeat(ins[0], f, axis=2), f, axis=3), None
    if kind == "elementwise":
        fn = a["fn"]
        if fn == "add":
            return ins[0] + ins[1], None
        if fn == "mul":
            return ins[0] * ins[1], None
        return ins[0] * ins[0].dtype.type(a.get("alpha", 1.0)), None
    raise AssertionError(kind)


def _backward_one(node: OpNode, ins, out, cache, gout, need):
    kind = node.kind
    a = node.attrs
    if kind == "conv2d":
        x, w = ins
        gx = gw = None
        if need[1]:
            gw = kernels.conv2d_backward_weights(cache, gout, w.shape,
                                                 dilation=a["dilation"])
        if need[0]:
            gx = kernels.conv2d_backward_input(gout, w, x.shape,
                                               stride=a["stride"],
                                               dilation=a["dilation"])
        return gx, gw
    if kind == "matmul":
        x, y = ins
        gx = gout @ y.T if need[0] else None
        gy = x.reshape(-1, x.shape[-1]).T @ gout.reshape(-1, gout.shape[-1]) \
            if need[1] else None
        return gx, gy
    if kind == "bias_add":
        axes = tuple(i for i in range(gout.ndim) if i != 1)
        gb = gout.sum(axis=axes) if need[1] else None
        return (gout if need[0] else None), gb
    if kind == "relu":
        return ((out > 0) * gout if need[0] else None,)
    if kind == "concat":
        axis = a["axis"]
        splits = np.cumsum([x.shape[axis] for x in ins[:-1]])
        pieces = np.split(gout, splits, axis=axis)
        return tuple(p if n else None for p, n in zip(pieces, need))
    if kind == "softmax_ce":
        glogits = _softmax_ce_backward(gout, cache, ins[0].dtype) if need[0] else None
        return glogits, None, None
    if kind == "avgpool":
        k = a["window"]
        g = np.repeat(np.repeat(gout, k, axis=2), k, axis=3)
        return (g / (k * k) if need[0] else None,)
    if kind == "upsample":
        f = a["factor"]
        n, c, h, w = gout.shape
        g = gout.reshape(n, c, h // f, f, w // f, f).sum(axis=(3, 5))
        return (g if need[0] else None,)
    if kind == "elementwise":
        fn = a["fn"]
        if fn == "add":
            return (gout if need[0] else None, gout if need[1] else None)
        if fn == "mul":
            return (gout * ins[1] if need[0] else None,
                    gout * ins[0] if need[1] else None)
        return (gout * gout.dtype.type(a.get("alpha", 1.0)) if need[0] else None,)
    raise AssertionError(kind)


def _softmax_ce_forward(logits, labels, class_weights):
    loss, dlogits = weighted_ce_loss(logits, labels, class_weights)
    return np.array([loss], dtype=logits.dtype), dlogits


def _softmax_ce_backward(gout, cache, dtype):
    # cache is the analytic gradient for a unit seed; scale by the upstream one
    return cache * cache.dtype.type(gout.reshape(-1)[0])
