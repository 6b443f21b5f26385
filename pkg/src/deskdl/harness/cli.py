"""Command line entry point.

Subcommands cover the whole workflow: generate scenes, stage them onto
nodes, train, count FLOPs, run the weak-scaling sweep and the micro
benchmarks. Exit code 0 means every internal verification passed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from ..flops import count_graph, train_flops_per_sample
from ..model import MiniDenseNet, SceneConfig, save_dataset
from .bench import bench_allreduce, bench_kernels, bench_pipeline
from .config import RunConfig
from .scaling import lag_throughput, scaling_csv, weak_scaling
from .staging_run import stage_and_verify
from .trainer import model_flops_per_sample, train_run


def _setup_logging() -> None:
    level = os.environ.get("DESKDL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _cmd_gen_data(args) -> int:
    cfg = SceneConfig(count=args.count, channels=args.channels,
                      height=args.height, width=args.width,
                      frequencies=tuple(args.frequencies))
    catalog = save_dataset(args.out, cfg, seed=args.seed)
    freqs = catalog["frequencies"]
    print(f"wrote {len(catalog['files'])} scenes to {args.out}")
    print("aggregate frequencies:", [round(f, 6) for f in freqs])
    drift = max(abs(a - b) for a, b in zip(freqs, cfg.frequencies))
    if drift > 0.01:
        print(f"frequency drift {drift:.4f} exceeds 0.01", file=sys.stderr)
        return 1
    return 0


def _cmd_stage(args) -> int:
    outcome = stage_and_verify(args.data, args.nodes, args.per_node,
                               seed=args.seed, out_dir=args.out,
                               per_thread_bw=args.per_thread_bw,
                               threads=args.threads, link_bw=args.link_bw,
                               backend=args.backend)
    print(json.dumps(outcome.to_dict(), indent=2))
    return 0 if outcome.read_once else 1


def _cmd_train(args) -> int:
    cfg = RunConfig.from_file(args.config)
    if args.out:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    result = train_run(cfg)
    print(f"trained {len(result.records)} steps on {cfg.world} ranks "
          f"({cfg.backend}), final loss {result.final_loss:.4f}")
    print(f"sustained: {result.stats.median:.3f} samples/s/rank, "
          f"CI [{result.stats.p16:.3f}, {result.stats.p84:.3f}], "
          f"{result.stats.flops_per_s / 1e9:.2f} GFLOP/s")
    for step, digest in result.digests:
        print(f"hash check step {step}: {digest[:16]} ok")
    for entry in result.val_history:
        ious = ", ".join(f"{v:.3f}" for v in entry["iou"])
        print(f"validation @ step {entry['step']}: loss {entry['loss']:.4f}, "
              f"IoU [{ious}]")
    return 0


def _cmd_flops(args) -> int:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    net = MiniDenseNet(cfg.net, seed=0)
    sc = cfg.data.scene
    shapes = {name: v.shape for name, v in net.params.items()}
    shapes.update({"x": (args.batch, sc.channels, sc.height, sc.width),
                   "labels": (args.batch, sc.height, sc.width),
                   "class_weights": (cfg.net.classes,)})
    report = count_graph(net.graph, shapes, batch=args.batch)
    payload = report.to_dict()
    payload["train_per_sample_estimate"] = train_flops_per_sample(report)
    print(json.dumps(payload, indent=2))
    return 0


def _cmd_bench_allreduce(args) -> int:
    rows = bench_allreduce(world=args.world, sizes=tuple(args.sizes),
                           repeats=args.repeats, backend=args.backend,
                           latency_s=args.latency_ms / 1e3)
    print(f"{'algo':<8} {'p':>3} {'n':>9} {'best_s':>9} {'MB/s':>9} "
          f"{'rel_err':>9} ident")
    ok = True
    for r in rows:
        ok = ok and r["byte_identical"]
        print(f"{r['algo']:<8} {r['world']:>3} {r['n']:>9} {r['best_s']:>9.4f} "
              f"{r['mb_s']:>9.1f} {r['rel_err']:>9.1e} {r['byte_identical']}")
    return 0 if ok else 1


def _cmd_bench_pipeline(args) -> int:
    rows = bench_pipeline(items=args.items, capacities=tuple(args.capacities),
                          workers_list=tuple(args.workers))
    print(f"{'workers':>7} {'capacity':>8} {'items/s':>10} {'stall':>7}")
    for r in rows:
        print(f"{r['workers']:>7} {r['capacity']:>8} {r['items_per_s']:>10.1f} "
              f"{r['stall_fraction']:>7.3f}")
    return 0


def _cmd_bench_kernels(args) -> int:
    shapes = [tuple(int(v) for v in s.split("x")) for s in args.shapes]
    rows = bench_kernels(shapes=shapes, repeats=args.repeats)
    print(f"{'backend':<8} {'shape (BxCinxHxWxCoutxK)':<28} {'fwd+bwd s':>10}")
    for r in rows:
        shape = "x".join(str(v) for v in r["shape"])
        print(f"{r['backend']:<8} {shape:<28} {r['fwd_bwd_s']:>10.5f}")
    return 0


def _cmd_scaling(args) -> int:
    base = RunConfig.from_file(args.config)
    counts = sorted(set(args.workers))
    points = weak_scaling(base, counts)
    csv = scaling_csv(points)
    print(csv, end="")
    if args.out:
        os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
        with open(args.out, "w") as fh:
            fh.write(csv)
    if args.lag_check:
        cmp = lag_throughput(base)
        print(f"lag0 {cmp['lag0']['median_rank_rate']:.3f} vs "
              f"lag1 {cmp['lag1']['median_rank_rate']:.3f} samples/s/rank "
              f"(speedup {cmp['speedup']:.3f}x)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deskdl",
                                description="desk-scale data-parallel "
                                            "segmentation training")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic scene dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=256)
    g.add_argument("--channels", type=int, default=16)
    g.add_argument("--height", type=int, default=64)
    g.add_argument("--width", type=int, default=48)
    g.add_argument("--frequencies", type=float, nargs=3,
                   default=[0.982, 0.017, 0.001])
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=_cmd_gen_data)

    s = sub.add_parser("stage", help="stage a dataset onto simulated nodes")
    s.add_argument("--data", required=True, help="gen-data output directory")
    s.add_argument("--out", required=True)
    s.add_argument("--nodes", type=int, default=4)
    s.add_argument("--per-node", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=8)
    s.add_argument("--per-thread-bw", type=float, default=1.79)
    s.add_argument("--link-bw", type=float, default=11.98)
    s.add_argument("--backend", choices=("inproc", "tcp"), default="inproc")
    s.set_defaults(fn=_cmd_stage)

    t = sub.add_parser("train", help="run one training job from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", default="", help="override the config's out_dir")
    t.set_defaults(fn=_cmd_train)

    f = sub.add_parser("flops", help="FLOP report for the configured network")
    f.add_argument("--config", default="", help="run config JSON (optional)")
    f.add_argument("--batch", type=int, default=1)
    f.set_defaults(fn=_cmd_flops)

    ba = sub.add_parser("bench-allreduce", help="ring vs hybrid all-reduce")
    ba.add_argument("--world", type=int, default=8)
    ba.add_argument("--sizes", type=int, nargs="+",
                    default=[1000, 100_000, 1_000_000])
    ba.add_argument("--repeats", type=int, default=3)
    ba.add_argument("--backend", choices=("inproc", "tcp"), default="inproc")
    ba.add_argument("--latency-ms", type=float, default=0.0)
    ba.set_defaults(fn=_cmd_bench_allreduce)

    bp = sub.add_parser("bench-pipeline", help="prefetch queue benchmark")
    bp.add_argument("--items", type=int, default=200)
    bp.add_argument("--capacities", type=int, nargs="+", default=[1, 2, 4, 8])
    bp.add_argument("--workers", type=int, nargs="+", default=[1, 2, 4])
    bp.set_defaults(fn=_cmd_bench_pipeline)

    bk = sub.add_parser("bench-kernels", help="compiled vs NumPy conv kernels")
    bk.add_argument("--shapes", nargs="+", default=["2x16x32x24x16x3"],
                    help="BxCinxHxWxCoutxK")
    bk.add_argument("--repeats", type=int, default=3)
    bk.set_defaults(fn=_cmd_bench_kernels)

    sc = sub.add_parser("scaling", help="weak-scaling sweep over rank counts")
    sc.add_argument("--config", required=True)
    sc.add_argument("--workers", type=int, nargs="+",
                    default=[1, 2, 4, 8, 16])
    sc.add_argument("--out", default="", help="CSV output path")
    sc.add_argument("--lag-check", action="store_true",
                    help="also compare lag 0 vs lag 1 throughput")
    sc.set_defaults(fn=_cmd_scaling)

    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
