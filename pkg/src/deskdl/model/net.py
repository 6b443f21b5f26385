"""Mini dense-block segmentation network built on the op graph.

Down path of dense blocks (3x3 convs whose outputs concatenate onto the
running feature map), average-pool downsampling, a bottleneck block, and an
up path that upsamples, concatenates the matching skip tensor, compresses
with a 1x1 conv and runs another dense block. The head emits per-pixel
logits for 3 classes at full input resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import NamedTensor, ShapeError
from ..graph import OpGraph
from . import ops

_GROWTH_CHOICES = (16, 32)


@dataclass(frozen=True)
class NetConfig:
    channels_in: int = 16
    growth: int = 16
    block_layers: int = 2
    levels: int = 2
    classes: int = 3

    def __post_init__(self):
        if self.growth not in _GROWTH_CHOICES:
            raise ValueError(f"growth must be one of {_GROWTH_CHOICES}")
        if self.channels_in < 1 or self.block_layers < 1 or self.classes < 2:
            raise ValueError("bad network configuration")
        if self.levels < 0:
            raise ValueError("levels must be non-negative")

    @property
    def downsample_factor(self) -> int:
        return 2 ** self.levels


class MiniDenseNet:
    """Seeded network instance: an op graph plus its parameter arrays."""

    def __init__(self, cfg: NetConfig = NetConfig(), seed: int = 0):
        self.cfg = cfg
        self.graph = OpGraph()
        self.params = {}
        self._rng = np.random.default_rng(seed)
        self._build()
        self.param_order = list(self.params)
        del self._rng

    # -- construction -----------------------------------------------------

    def _conv(self, x: str, name: str, cin: int, cout: int, k: int = 3,
              act: bool = True) -> str:
        wname = self.graph.add_input(f"{name}.w", role="param")
        bname = self.graph.add_input(f"{name}.b", role="param")
        limit = np.sqrt(6.0 / (cin * k * k))
        self.params[wname] = self._rng.uniform(
            -limit, limit, size=(cout, cin, k, k)).astype(np.float32)
        self.params[bname] = np.zeros(cout, dtype=np.float32)
        out = self.graph.conv2d(x, wname, f"{name}.conv", kh=k, kw=k,
                                cin=cin, cout=cout)
        out = self.graph.bias_add(out, bname, f"{name}.bias")
        if act:
            out = self.graph.relu(out, f"{name}.relu")
        return out

    def _dense_block(self, x: str, name: str, cin: int) -> tuple:
        k = self.cfg.growth
        feats = x
        ch = cin
        for j in range(self.cfg.block_layers):
            fresh = self._conv(feats, f"{name}.l{j}", ch, k)
            feats = self.graph.concat([feats, fresh], f"{name}.cat{j}")
            ch += k
        return feats, ch

    def _build(self) -> None:
        g = self.graph
        cfg = self.cfg
        x = g.add_input("x", role="data")
        g.add_input("labels", role="aux")
        g.add_input("class_weights", role="aux")

        cur = self._conv(x, "stem", cfg.channels_in, cfg.growth)
        ch = cfg.growth

        skips = []
        for lvl in range(cfg.levels):
            cur, ch = self._dense_block(cur, f"down{lvl}", ch)
            skips.append((cur, ch))
            cur = g.avgpool(cur, f"pool{lvl}", window=2)

        cur, ch = self._dense_block(cur, "mid", ch)

        for lvl in reversed(range(cfg.levels)):
            skip, skip_ch = skips[lvl]
            cur = g.upsample(cur, f"up{lvl}.grow", factor=2)
            cur = g.concat([cur, skip], f"up{lvl}.cat")
            cur = self._conv(cur, f"up{lvl}.squeeze", ch + skip_ch, skip_ch, k=1)
            ch = skip_ch
            cur, ch = self._dense_block(cur, f"up{lvl}", ch)

        head = self._conv(cur, "head", ch, cfg.classes, k=1, act=False)
        self.logits_name = head
        self.loss_name = g.softmax_ce(head, "labels", "class_weights", "loss",
                                      classes=cfg.classes)

    # -- execution ----------------------------------------------------------

    def _check_batch(self, batch) -> None:
        if batch.ndim != 4 or batch.shape[1] != self.cfg.channels_in:
            raise ShapeError(f"batch {batch.shape} does not match "
                             f"[N,{self.cfg.channels_in},H,W]")
        d = self.cfg.downsample_factor
        if batch.shape[2] % d or batch.shape[3] % d:
            raise ShapeError(f"spatial extent {batch.shape[2:]} not divisible by {d}")

    def forward(self, batch, params=None):
        batch = np.asarray(batch)
        self._check_batch(batch)
        values = dict(params if params is not None else self.params)
        values["x"] = batch
        out, _ = ops.run_forward(self.graph, values, targets=[self.logits_name])
        return out[self.logits_name]

    def forward_loss(self, batch, labels, class_weights, params=None):
        """Returns (loss scalar, logits, tape for backward)."""
        batch = np.asarray(batch)
        self._check_batch(batch)
        values = dict(params if params is not None else self.params)
        values["x"] = batch
        values["labels"] = np.asarray(labels)
        values["class_weights"] = np.asarray(class_weights)
        out, tape = ops.run_forward(self.graph, values,
                                    targets=[self.loss_name, self.logits_name])
        return float(out[self.loss_name][0]), out[self.logits_name], tape

    def backward(self, tape) -> dict:
        return ops.run_backward(self.graph, tape, self.loss_name,
                                wrt=self.param_order)

    def grads_as_named(self, grads: dict) -> list:
        """Gradients as flat float32 tensors in stable parameter order."""
        out = []
        for name in self.param_order:
            g = np.ascontiguousarray(grads[name], dtype=np.float32)
            out.append(NamedTensor(name, self.params[name].shape, g.reshape(-1)))
        return out

    def predictions(self, logits) -> np.ndarray:
        return np.argmax(logits, axis=1)

    # -- parameter state ------------------------------------------------------

    def state_dict(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def load_state(self, state: dict) -> None:
        for name in self.param_order:
            if name not in state:
                raise KeyError(f"missing parameter {name!r}")
            v = np.asarray(state[name], dtype=np.float32)
            if v.shape != self.params[name].shape:
                raise ShapeError(f"{name}: shape {v.shape} != {self.params[name].shape}")
            self.params[name] = v.copy()

    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


def first_nonfinite(tape) -> str | None:
    """Name of the first node on the tape with a non-finite value, if any."""
    for node in tape.order:
        if not np.isfinite(tape.values[node.name]).all():
            return node.name
    return None
