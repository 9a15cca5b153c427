"""Command line entry: gen-data | train | eval | ablate | bench | render."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..sim import expert, render, tasks, world as sim_world
from . import container
from .ablate import ablate
from .bench import bench_latency
from .config import ABLATION_TAGS, RunConfig
from .dataset import fold_seed, generate_dataset
from .evaluate import evaluate_checkpoint
from .train import train


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = RunConfig.from_dict(json.loads(Path(args.config).read_text(encoding="utf-8")))
    else:
        cfg = RunConfig.desk_default()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "single_thread", False):
        cfg.single_thread = True
    if getattr(args, "ablate", None):
        cfg = cfg.with_ablation(args.ablate)
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="deskvla", description=__doc__)
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate expert demonstrations")
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=str, required=True)

    p = sub.add_parser("train", help="train a policy on a dataset")
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--ablate", choices=ABLATION_TAGS, default=None)
    p.add_argument("--single-thread", action="store_true", dest="single_thread")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a task suite")
    p.add_argument("--ckpt", type=str, required=True)
    p.add_argument("--suite", choices=("seen", "similar", "unseen"), default="seen")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--provider", choices=("policy", "expert", "random"), default="policy")
    p.add_argument("--single-thread", action="store_true", dest="single_thread")

    p = sub.add_parser("ablate", help="train and compare the four ablation variants")
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--single-thread", action="store_true", dest="single_thread")

    p = sub.add_parser("bench", help="latency report for a checkpoint")
    p.add_argument("--ckpt", type=str, required=True)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--single-thread", action="store_true", dest="single_thread")

    p = sub.add_parser("render", help="dump PPM frames of an expert episode")
    p.add_argument("--task", type=str, default="seen_ball_basket")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=60)
    p.add_argument("--out", type=str, required=True)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "gen-data":
        cfg = _load_config(args)
        manifest = generate_dataset(cfg, args.out)
        print(f"wrote {len(manifest['episodes'])} episodes to {args.out}")
        return 0

    if args.command == "train":
        cfg = _load_config(args)
        out = train(cfg, args.data, args.out)
        print(f"checkpoint written to {out}")
        return 0

    if args.command == "eval":
        run_cfg = None
        extra = container.read_json(Path(args.ckpt) / "manifest.json").get("extra", {})
        if "run_config" in extra:
            run_cfg = RunConfig.from_dict(extra["run_config"])
        if run_cfg is None:
            run_cfg = RunConfig.desk_default()
        if args.single_thread:
            run_cfg.single_thread = True
        trials = args.trials if args.trials is not None else run_cfg.trials_per_task
        seed = args.seed if args.seed is not None else run_cfg.seed
        out_csv = Path(args.out) / f"metrics_{args.suite}.csv"
        rows = evaluate_checkpoint(args.ckpt, args.suite, trials, seed, run_cfg=run_cfg,
                                   provider=args.provider, out_csv=out_csv)
        for r in rows:
            print(r.csv())
        print(f"metrics written to {out_csv}")
        return 0

    if args.command == "ablate":
        cfg = _load_config(args)
        report = ablate(cfg, args.data, args.out, eval_trials=args.trials)
        print(json.dumps(report["results"], indent=2))
        return 0

    if args.command == "bench":
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report = bench_latency(args.ckpt, steps=args.steps, seed=args.seed,
                               single_thread=args.single_thread, out_path=out / "bench.json")
        print(json.dumps(report, indent=2))
        return 0

    if args.command == "render":
        task = tasks.get_task(args.task)
        rig = sim_world.default_rig()
        world = sim_world.reset(task, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for t in range(args.steps):
            container.write_ppm(out / f"frame_{t:04d}.ppm", render.render_full(world, rig).rgb)
            sim_world.step(world, expert.expert_action(world, task))
            if sim_world.check_success(world, task):
                break
        print(f"frames written to {out}")
        return 0

    return 1


if __name__ == "__main__":
    sys.exit(main())
