"""Run configuration: one JSON file describes a whole training run."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from ..core import RankTopology
from ..model import NetConfig, SceneConfig
from ..optimizer import OptimConfig

BACKENDS = ("inproc", "tcp")
WEIGHTINGS = ("inv_sqrt", "uniform")


@dataclass(frozen=True)
class DataConfig:
    mode: str = "generated"       # generated | staged
    staged_dir: str = ""          # staged mode: output of the stage step
    scene: SceneConfig = field(default_factory=SceneConfig)

    def __post_init__(self):
        if self.mode not in ("generated", "staged"):
            raise ValueError(f"unknown data mode {self.mode!r}")
        if self.mode == "staged" and not self.staged_dir:
            raise ValueError("staged mode needs staged_dir")

    def to_dict(self) -> dict:
        return {"mode": self.mode, "staged_dir": self.staged_dir,
                "scene": self.scene.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        scene = SceneConfig.from_dict(d.get("scene", {}))
        return cls(mode=d.get("mode", "generated"),
                   staged_dir=d.get("staged_dir", ""), scene=scene)


@dataclass(frozen=True)
class RunConfig:
    topology: RankTopology = field(default_factory=lambda: RankTopology(1, 1, 1))
    backend: str = "inproc"
    latency_s: float = 0.0
    lag: int = 0
    steps: int = 10
    epochs: int = 0               # staged mode: full passes over per-node data
    local_batch: int = 1
    seed: int = 0
    optim: OptimConfig = field(default_factory=OptimConfig)
    net: NetConfig = field(default_factory=NetConfig)
    data: DataConfig = field(default_factory=DataConfig)
    class_weighting: str = "inv_sqrt"
    out_dir: str = ""
    hash_steps: tuple = ()        # extra verification steps beyond {1, 10, end}
    snapshot_steps: tuple = ()    # steps whose full weights the result keeps
    val_scenes: int = 0           # generated validation set size (0 disables)

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")
        if self.class_weighting not in WEIGHTINGS:
            raise ValueError(f"class_weighting must be one of {WEIGHTINGS}")
        if self.lag not in (0, 1):
            raise ValueError("lag must be 0 or 1")
        if self.local_batch < 1:
            raise ValueError("local_batch must be positive")
        if self.steps < 0 or self.epochs < 0:
            raise ValueError("steps and epochs must be non-negative")
        if self.data.mode == "generated" and self.steps < 1:
            raise ValueError("generated mode needs steps >= 1")
        if self.data.mode == "staged" and self.epochs < 1:
            raise ValueError("staged mode needs epochs >= 1")
        if self.net.channels_in != self.data.scene.channels:
            raise ValueError(
                f"net expects {self.net.channels_in} input channels, "
                f"scenes carry {self.data.scene.channels}")

    @property
    def world(self) -> int:
        return self.topology.world_size

    @property
    def global_batch(self) -> int:
        """Combined batch across all ranks: local batch x N x G."""
        return self.local_batch * self.world

    def to_dict(self) -> dict:
        t = self.topology
        return {
            "topology": {"num_nodes": t.num_nodes, "local_ranks": t.local_ranks,
                         "lanes": t.lanes, "control_radix": t.control_radix},
            "backend": self.backend,
            "latency_s": self.latency_s,
            "lag": self.lag,
            "steps": self.steps,
            "epochs": self.epochs,
            "local_batch": self.local_batch,
            "seed": self.seed,
            "optim": {"lr": self.optim.lr, "momentum": self.optim.momentum,
                      "trust": self.optim.trust,
                      "weight_decay": self.optim.weight_decay,
                      "eps": self.optim.eps},
            "net": {"channels_in": self.net.channels_in,
                    "growth": self.net.growth,
                    "block_layers": self.net.block_layers,
                    "levels": self.net.levels, "classes": self.net.classes},
            "data": self.data.to_dict(),
            "class_weighting": self.class_weighting,
            "out_dir": self.out_dir,
            "hash_steps": list(self.hash_steps),
            "snapshot_steps": list(self.snapshot_steps),
            "val_scenes": self.val_scenes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        topo = d.get("topology", {})
        opt = d.get("optim", {})
        net = d.get("net", {})
        return cls(
            topology=RankTopology(
                num_nodes=topo.get("num_nodes", 1),
                local_ranks=topo.get("local_ranks", 1),
                lanes=topo.get("lanes", 1),
                control_radix=topo.get("control_radix", 4)),
            backend=d.get("backend", "inproc"),
            latency_s=float(d.get("latency_s", 0.0)),
            lag=int(d.get("lag", 0)),
            steps=int(d.get("steps", 10)),
            epochs=int(d.get("epochs", 0)),
            local_batch=int(d.get("local_batch", 1)),
            seed=int(d.get("seed", 0)),
            optim=OptimConfig(lr=opt.get("lr", 1.0),
                              momentum=opt.get("momentum", 0.9),
                              trust=opt.get("trust", 0.02),
                              weight_decay=opt.get("weight_decay", 0.0),
                              eps=opt.get("eps", 1e-8)),
            net=NetConfig(channels_in=net.get("channels_in", 16),
                          growth=net.get("growth", 16),
                          block_layers=net.get("block_layers", 2),
                          levels=net.get("levels", 2),
                          classes=net.get("classes", 3)),
            data=DataConfig.from_dict(d.get("data", {})),
            class_weighting=d.get("class_weighting", "inv_sqrt"),
            out_dir=d.get("out_dir", ""),
            hash_steps=tuple(d.get("hash_steps", ())),
            snapshot_steps=tuple(d.get("snapshot_steps", ())),
            val_scenes=int(d.get("val_scenes", 0)),
        )

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
