"""Synchronous data-parallel training over the rank fabric.

One thread per rank runs compute (forward/backward/apply); a paired comm
thread owns that rank's control-plane coordinator and executes gradient
all-reduces in the globally scheduled order. Gradient lag 0 waits for the
current step's reduction before updating; lag 1 applies the previous step's
reduced gradients, letting the current reduction overlap the next forward
and backward pass.

Sample order is controlled by the seed alone: step t draws the same global
batch regardless of how ranks split it, so a 4-rank x 2 run consumes the
data of a 1-rank x 8 run sample for sample.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import queue
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from ..collectives import ChunkChannel, hybrid_allreduce
from ..control_plane import Coordinator, build_tree
from ..flops import count_graph, train_flops_per_sample
from ..model import (ClassWeights, MiniDenseNet, iou_all, make_scene,
                     read_scene, save_checkpoint, uniform_weights,
                     weighted_ce_loss)
from ..optimizer import LayerParam, larc_sgd_step
from ..runtime import run_rank_threads
from ..transport import (MSG_CONTROL, MSG_READINESS, MSG_SCHEDULE, Frame,
                         ProtocolError, pack_control, pack_readiness,
                         pack_schedule, unpack_control, unpack_readiness,
                         unpack_schedule)
from .config import RunConfig
from .stats import StepRecord, SustainedStats, loss_curve_csv, records_to_csv, \
    sustained_stats

log = logging.getLogger("deskdl.trainer")

# seed-stream discriminators, so train/val/shuffle draws never collide
_TRAIN_NS = 0
_VAL_NS = 1
_PERM_NS = 2


class TrainingError(Exception):
    pass


# -- batch sources -----------------------------------------------------------


class GeneratedSource:
    """Rank's slice of a deterministic global scene stream."""

    def __init__(self, scene_cfg, seed: int, world: int, local_batch: int,
                 rank: int):
        self.cfg = scene_cfg
        self.seed = seed
        self.world = world
        self.local_batch = local_batch
        self.rank = rank

    def batch(self, step: int):
        b = self.local_batch
        base = self.rank * b
        fields, labels = [], []
        for j in range(base, base + b):
            rng = np.random.default_rng((self.seed, _TRAIN_NS, step, j))
            sc = make_scene(self.cfg, rng, name=f"t{step}.{j}")
            fields.append(sc.field)
            labels.append(sc.labels)
        return np.stack(fields), np.stack(labels)


class StagedSource:
    """Rank's walk over its node's staged scene files.

    Every epoch reshuffles the node list with a seed shared by the node's
    ranks; each step consumes local_ranks x local_batch consecutive samples,
    so the number of steps in an epoch does not depend on the rank count.
    """

    def __init__(self, staged_dir: str, node: int, slot: int,
                 local_ranks: int, local_batch: int, seed: int):
        with open(os.path.join(staged_dir, "staged.json")) as fh:
            manifest = json.load(fh)
        names = manifest["assignments"][node]
        node_dir = os.path.join(staged_dir, f"node{node}")
        self.scenes = [read_scene(os.path.join(node_dir, fid)) for fid in names]
        if not self.scenes:
            raise TrainingError(f"node {node}: no staged samples")
        self.slot = slot
        self.local_ranks = local_ranks
        self.local_batch = local_batch
        self.seed = seed
        self._perm_epoch = -1
        self._perm = None

    @property
    def steps_per_epoch(self) -> int:
        return len(self.scenes) // (self.local_ranks * self.local_batch)

    def batch(self, step: int):
        spe = self.steps_per_epoch
        if spe < 1:
            raise TrainingError(
                f"{len(self.scenes)} staged samples cannot feed "
                f"{self.local_ranks} x batch {self.local_batch}")
        epoch, t = divmod(step, spe)
        if epoch != self._perm_epoch:
            rng = np.random.default_rng((self.seed, _PERM_NS, epoch))
            self._perm = rng.permutation(len(self.scenes))
            self._perm_epoch = epoch
        base = (t * self.local_ranks + self.slot) * self.local_batch
        idx = self._perm[base:base + self.local_batch]
        fields = np.stack([self.scenes[i].field for i in idx])
        labels = np.stack([self.scenes[i].labels for i in idx])
        return fields, labels


def validation_set(scene_cfg, seed: int, count: int):
    """Fixed held-out scenes, independent of the training stream."""
    fields, labels = [], []
    for i in range(count):
        rng = np.random.default_rng((seed, _VAL_NS, i))
        sc = make_scene(scene_cfg, rng, name=f"v{i}")
        fields.append(sc.field)
        labels.append(sc.labels)
    return np.stack(fields), np.stack(labels)


def evaluate(net: MiniDenseNet, fields, labels, weight_vec) -> dict:
    """Mean loss and per-class IoU over a scene set, one sample at a time."""
    losses = []
    preds = np.empty(labels.shape, dtype=np.int64)
    for i in range(fields.shape[0]):
        logits = net.forward(fields[i:i + 1])
        loss, _ = weighted_ce_loss(logits, labels[i:i + 1], weight_vec)
        losses.append(loss)
        preds[i] = net.predictions(logits)[0]
    ious = iou_all(preds, labels, net.cfg.classes)
    return {"loss": float(np.mean(losses)),
            "iou": [float(v) for v in ious],
            "pixel_acc": float(np.mean(preds == labels))}


# -- per-rank communication thread -------------------------------------------


class GradReducer(threading.Thread):
    """Owns a rank's coordinator and runs its collectives in schedule order.

    Gradient sets are submitted per step (the coordinator epoch); results
    come back on a queue once every tensor of the set has been reduced.
    Application-level control frames seen while polling are routed to
    ctrl_inbox untouched.
    """

    def __init__(self, demux, topology, tree, ctrl_inbox: queue.Queue):
        super().__init__(daemon=True, name=f"comm-{demux.rank}")
        self._dx = demux
        self.rank = demux.rank
        self.topology = topology
        self.chan = ChunkChannel(demux, timeout=120.0)
        self.coord = Coordinator(tree, self.rank)
        self.ctrl_inbox = ctrl_inbox
        self.submit_q = queue.Queue()
        self.result_q = queue.Queue()
        self.error = None

    def submit(self, epoch: int, grads: dict) -> None:
        self.submit_q.put((epoch, grads))

    def result(self, timeout: float = 600.0):
        item = self.result_q.get(timeout=timeout)
        if isinstance(item, BaseException):
            raise item
        return item

    def stop(self) -> None:
        self.submit_q.put(None)

    # internal ---------------------------------------------------------------

    def _send_all(self, msgs) -> None:
        for dst, msg in msgs:
            if msg[0] == "r":
                frame = Frame(MSG_READINESS, self.rank,
                              pack_readiness(msg[1], msg[2]))
            else:
                frame = Frame(MSG_SCHEDULE, self.rank,
                              pack_schedule(msg[1], msg[2]))
            self._dx.send(dst, frame)

    def _dispatch(self, frame: Frame) -> None:
        if frame.msg_type == MSG_READINESS:
            epoch, name = unpack_readiness(frame.payload)
            self._send_all(self.coord.handle(frame.src_rank, ("r", epoch, name)))
        elif frame.msg_type == MSG_SCHEDULE:
            epoch, names = unpack_schedule(frame.payload)
            self._send_all(self.coord.handle(frame.src_rank, ("s", epoch, names)))
        elif frame.msg_type == MSG_CONTROL:
            kind, body = unpack_control(frame.payload)
            self.ctrl_inbox.put((kind, frame.src_rank, body))
        else:
            raise ProtocolError(f"unexpected control-channel frame type "
                                f"{frame.msg_type}")

    def _drain(self, timeout: float) -> None:
        frame = self._dx.next_control(timeout=timeout)
        while frame is not None:
            self._dispatch(frame)
            frame = self._dx.next_control(timeout=0.0)

    def _reduce_set(self, epoch: int, grads: dict) -> dict:
        if self.coord.epoch != epoch:
            raise TrainingError(f"rank {self.rank}: coordinator epoch "
                                f"{self.coord.epoch}, submitted {epoch}")
        for name in grads:
            self._send_all(self.coord.mark_ready(name))
        is_root = self.coord.tree.parent_of(self.rank) is None
        reduced = {}
        pending = set(grads)
        while pending:
            self._drain(0.002)
            if is_root and self.coord.has_pending_schedule():
                self._send_all(self.coord.flush())
            for name in self.coord.take_executable():
                reduced[name] = hybrid_allreduce(
                    self.chan, self.topology, name, grads[name],
                    epoch=epoch, op="mean")
                pending.discard(name)
        self._send_all(self.coord.advance_epoch())
        return reduced

    def run(self) -> None:
        try:
            while True:
                try:
                    job = self.submit_q.get(timeout=0.002)
                except queue.Empty:
                    self._drain(0.0)
                    continue
                if job is None:
                    return
                epoch, grads = job
                self.result_q.put((epoch, self._reduce_set(epoch, grads)))
        except BaseException as exc:  # noqa: BLE001 - surfaced to compute thread
            self.error = exc
            self.result_q.put(exc)


# -- parameter hashing --------------------------------------------------------


def param_digest(params: dict, order) -> str:
    h = hashlib.sha256()
    for name in order:
        v = np.ascontiguousarray(params[name], dtype=np.float32)
        h.update(name.encode())
        h.update(str(v.shape).encode())
        h.update(v.tobytes())
    return h.hexdigest()


def _hash_sync(dx, rank: int, world: int, step: int, digest: str,
               ctrl_inbox: queue.Queue) -> None:
    """All-rank weight-hash agreement; raises on any divergence."""
    body = step.to_bytes(4, "little") + digest.encode()
    if rank != 0:
        dx.send(0, Frame(MSG_CONTROL, rank, pack_control("hash", body)))
        deadline = time.monotonic() + 120.0
        while True:
            timeout = deadline - time.monotonic()
            if timeout <= 0:
                raise TrainingError(f"rank {rank}: no hash verdict for step {step}")
            kind, src, vbody = ctrl_inbox.get(timeout=timeout)
            if kind == "hash-ok":
                return
            if kind == "hash-bad":
                raise TrainingError(
                    f"rank {rank}: weights diverged at step {step} "
                    f"(root diagnostic: {vbody.decode()})")
            raise TrainingError(f"rank {rank}: unexpected control {kind!r}")

    digests = {0: digest}
    deadline = time.monotonic() + 120.0
    while len(digests) < world:
        timeout = deadline - time.monotonic()
        if timeout <= 0:
            missing = sorted(set(range(world)) - set(digests))
            raise TrainingError(f"hash check: no report from ranks {missing}")
        kind, src, hbody = ctrl_inbox.get(timeout=timeout)
        if kind != "hash":
            raise TrainingError(f"rank 0: unexpected control {kind!r}")
        hstep = int.from_bytes(hbody[:4], "little")
        if hstep != step:
            raise TrainingError(f"rank 0: hash for step {hstep}, expected {step}")
        digests[src] = hbody[4:].decode()

    bad = {r: d for r, d in digests.items() if d != digest}
    verdict = "hash-ok" if not bad else "hash-bad"
    diag = ("; ".join(f"rank {r}: {d[:12]}" for r, d in sorted(bad.items()))
            + f"; rank 0: {digest[:12]}") if bad else ""
    for dst in range(1, world):
        dx.send(dst, Frame(MSG_CONTROL, 0, pack_control(verdict, diag.encode())))
    if bad:
        raise TrainingError(f"weights diverged at step {step}: {diag}")


# -- the per-rank training loop ----------------------------------------------


def _make_source(cfg: RunConfig, rank: int):
    topo = cfg.topology
    if cfg.data.mode == "generated":
        return GeneratedSource(cfg.data.scene, cfg.seed, cfg.world,
                               cfg.local_batch, rank)
    return StagedSource(cfg.data.staged_dir, topo.node_of(rank),
                        topo.slot_of(rank), topo.local_ranks,
                        cfg.local_batch, cfg.seed)


def _total_steps(cfg: RunConfig, source) -> int:
    if cfg.data.mode == "generated":
        return cfg.steps
    return cfg.epochs * source.steps_per_epoch


def _weight_vector(cfg: RunConfig) -> np.ndarray:
    if cfg.class_weighting == "uniform":
        return uniform_weights(cfg.net.classes)
    return ClassWeights(cfg.data.scene.frequencies).vector()


def _rank_loop(rank: int, dx, cfg: RunConfig) -> dict:
    topo = cfg.topology
    world = cfg.world
    tree = build_tree(world, topo.control_radix)
    net = MiniDenseNet(cfg.net, seed=cfg.seed)
    lps = {name: LayerParam(name, net.params[name]) for name in net.param_order}
    # LayerParam wraps the live buffers: in-place updates feed the next forward
    for name in net.param_order:
        net.params[name] = lps[name].w
    wvec = _weight_vector(cfg)
    source = _make_source(cfg, rank)
    steps = _total_steps(cfg, source)
    hash_at = {1, 10, steps} | set(cfg.hash_steps)

    ctrl_inbox = queue.Queue()
    reducer = GradReducer(dx, topo, tree, ctrl_inbox)
    reducer.start()

    losses, rates, walls = [], [], []
    digests, snapshots, val_history = [], {}, []

    def apply_update(reduced: dict) -> None:
        for name in net.param_order:
            larc_sgd_step(lps[name], reduced[name].reshape(lps[name].w.shape),
                          cfg.optim)

    try:
        for t in range(steps):
            t0 = time.perf_counter()
            fields, labels = source.batch(t)
            loss, _, tape = net.forward_loss(fields, labels, wvec)
            if not np.isfinite(loss):
                raise TrainingError(f"rank {rank}: non-finite loss at step {t + 1}")
            grads = net.grads_as_named(net.backward(tape))
            reducer.submit(t, {g.name: g.data for g in grads})
            if cfg.lag == 0:
                _, reduced = reducer.result()
                apply_update(reduced)
            elif t > 0:
                _, reduced = reducer.result()
                apply_update(reduced)
            wall = time.perf_counter() - t0
            losses.append(loss)
            rates.append(cfg.local_batch / wall)
            walls.append(wall)

            step = t + 1
            if step in hash_at and world > 1:
                digest = param_digest(net.params, net.param_order)
                _hash_sync(dx, rank, world, step, digest, ctrl_inbox)
                digests.append((step, digest))
            elif step in hash_at:
                digests.append((step, param_digest(net.params, net.param_order)))
            if rank == 0 and step in cfg.snapshot_steps:
                snapshots[step] = net.state_dict()
            if (rank == 0 and cfg.data.mode == "staged" and cfg.val_scenes
                    and step % source.steps_per_epoch == 0):
                vf, vl = validation_set(cfg.data.scene, cfg.seed, cfg.val_scenes)
                val_history.append({"step": step, **evaluate(net, vf, vl, wvec)})

        if cfg.lag == 1 and steps > 0:
            _, reduced = reducer.result()
            apply_update(reduced)
        if rank == 0 and cfg.data.mode == "generated" and cfg.val_scenes:
            vf, vl = validation_set(cfg.data.scene, cfg.seed, cfg.val_scenes)
            val_history.append({"step": steps, **evaluate(net, vf, vl, wvec)})
    finally:
        reducer.stop()
        reducer.join(timeout=30.0)

    out = {"losses": losses, "rates": rates, "walls": walls,
           "digests": digests}
    if rank == 0:
        out["state"] = net.state_dict()
        out["snapshots"] = snapshots
        out["val"] = val_history
        out["steps_per_epoch"] = (source.steps_per_epoch
                                  if cfg.data.mode == "staged" else 0)
    return out


# -- run orchestration --------------------------------------------------------


@dataclass
class TrainResult:
    config: RunConfig
    records: list
    stats: SustainedStats
    state: dict
    digests: list                 # (step, digest) after cross-rank agreement
    snapshots: dict = field(default_factory=dict)
    val_history: list = field(default_factory=list)
    steps_per_epoch: int = 0

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss if self.records else float("nan")


def model_flops_per_sample(cfg: RunConfig) -> float:
    net = MiniDenseNet(cfg.net, seed=0)
    sc = cfg.data.scene
    shapes = {name: v.shape for name, v in net.params.items()}
    shapes.update({"x": (cfg.local_batch, sc.channels, sc.height, sc.width),
                   "labels": (cfg.local_batch, sc.height, sc.width),
                   "class_weights": (cfg.net.classes,)})
    report = count_graph(net.graph, shapes, batch=cfg.local_batch)
    return train_flops_per_sample(report)


def train_run(cfg: RunConfig) -> TrainResult:
    """Run one synchronous data-parallel training job; write artifacts."""
    t0 = time.perf_counter()
    results = run_rank_threads(cfg.world, lambda r, dx: _rank_loop(r, dx, cfg),
                               backend=cfg.backend, latency_s=cfg.latency_s,
                               timeout=3600.0)
    steps = len(results[0]["losses"])
    records = [StepRecord(step=t + 1,
                          rates=tuple(r["rates"][t] for r in results),
                          wall=max(r["walls"][t] for r in results),
                          loss=float(np.mean([r["losses"][t] for r in results])))
               for t in range(steps)]
    stats = sustained_stats(records, per_sample_flops=model_flops_per_sample(cfg))
    root = results[0]
    result = TrainResult(config=cfg, records=records, stats=stats,
                         state=root["state"], digests=root["digests"],
                         snapshots=root["snapshots"], val_history=root["val"],
                         steps_per_epoch=root["steps_per_epoch"])
    log.info("train: %d steps, %d ranks, %.1fs wall, sustained %.3f samples/s/rank",
             steps, cfg.world, time.perf_counter() - t0, stats.median)
    if cfg.out_dir:
        _write_artifacts(cfg, result)
    return result


def _write_artifacts(cfg: RunConfig, result: TrainResult) -> None:
    os.makedirs(cfg.out_dir, exist_ok=True)

    def put(name: str, text: str) -> None:
        with open(os.path.join(cfg.out_dir, name), "w") as fh:
            fh.write(text)

    put("config.json", cfg.to_json() + "\n")
    put("loss.csv", loss_curve_csv(result.records))
    put("records.csv", records_to_csv(result.records))
    put("metrics.json", json.dumps({
        "stats": result.stats.to_dict(),
        "hash_checks": [{"step": s, "digest": d} for s, d in result.digests],
        "validation": result.val_history,
        "final_loss": result.final_loss,
        "steps_per_epoch": result.steps_per_epoch,
    }, indent=2) + "\n")
    save_checkpoint(os.path.join(cfg.out_dir, "final.ckpt"), result.state)
