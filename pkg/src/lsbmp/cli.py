"""Command-line entry point.

Subcommands: gen-data, train, train-cc, plan, bench, report. Exit codes:
0 success, 1 planner failed to find a solution (plan), 2 usage or config
error, 3 numeric or file error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import bench as bench_mod
from . import data, nn, report, world
from .planner import (PlanConfig, PlanProblem, build_sample_bank, l2rrt_plan,
                      load_problem_file)
from .training import (ModelBundle, TrainConfig, build_collision_net,
                       build_latent_model, train_collision_net,
                       train_latent_model, write_loss_curves)


class ConfigError(Exception):
    """Bad user-supplied configuration; maps to exit code 2."""


def _parse_set(pairs):
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out


def _load_config_dict(path, overrides):
    doc = {}
    if path:
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"bad JSON in {path}: {e}") from e
    doc.update(overrides)
    return doc


def _log(args):
    if getattr(args, "quiet", False):
        return None
    return lambda msg: print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    overrides = _parse_set(args.set)
    try:
        wcfg = world.WorldConfig.from_dict(_load_config_dict(args.config, overrides))
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    log = _log(args)
    if args.kind == "dyn":
        ds = data.collect_dynamics_dataset(args.envs, args.traj_len, args.seed, wcfg)
        ds.save(args.out)
        if log:
            log(f"wrote {args.envs} trajectories of {args.traj_len} frames to {args.out}")
    else:
        ds = data.collect_collision_dataset(args.envs, args.pairs, args.seed, wcfg)
        ds.save(args.out)
        if log:
            frac = float(np.mean(ds.labels))
            log(f"wrote {len(ds)} labeled pairs to {args.out} "
                f"(free fraction {frac:.3f})")
    return 0


def _train_config(args) -> TrainConfig:
    overrides = _parse_set(args.set)
    try:
        return TrainConfig.from_dict(_load_config_dict(args.config, overrides))
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def cmd_train(args) -> int:
    cfg = _train_config(args)
    log = _log(args)
    dataset = data.DynamicsDataset.load(args.data)
    model = build_latent_model(cfg, image_side=dataset.cfg.image_side)
    t0 = time.perf_counter()
    records = train_latent_model(model, dataset, cfg, log=log)
    seconds = time.perf_counter() - t0
    corpus = dataset.images.reshape(-1, dataset.cfg.image_side ** 2)
    bank = build_sample_bank(model, corpus, cfg.bank_size, [cfg.seed, 5])
    ModelBundle(model=model, collision=None, train_config=cfg,
                world_config=dataset.cfg, sample_bank=bank,
                train_seconds=seconds).save(args.out)
    write_loss_curves(os.path.splitext(args.out)[0] + "_curves.csv", records)
    if log:
        log(f"trained latent model in {seconds:.1f}s -> {args.out}")
    return 0


def cmd_train_cc(args) -> int:
    cfg_overrides = _parse_set(args.set)
    log = _log(args)
    bundle = ModelBundle.load(args.model)
    cfg = bundle.train_config
    if args.config or cfg_overrides:
        try:
            merged = cfg.to_dict()
            merged.update(_load_config_dict(args.config, cfg_overrides))
            cfg = TrainConfig.from_dict(merged)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e
    dataset = data.CollisionDataset.load(args.data)
    ccnet = build_collision_net(cfg, dataset.features.shape[1])
    t0 = time.perf_counter()
    metrics = train_collision_net(ccnet, bundle.model, dataset, cfg, log=log)
    metrics["train_seconds"] = time.perf_counter() - t0
    bundle.collision = ccnet
    bundle.collision_metrics = metrics
    bundle.train_config = cfg
    bundle.save(args.out)
    if log:
        log(f"collision net held-out accuracy {metrics['accuracy']:.4f}, "
            f"false positive rate {metrics['false_positive_rate']:.4f}")
    return 0


def cmd_plan(args) -> int:
    overrides = _parse_set(args.set)
    bundle, delta, r_goal = bench_mod._load_bundle(args.model)
    obstacles, start, goal, prob_r_goal = load_problem_file(args.problem)
    wcfg = bundle.world_config
    try:
        cfg = PlanConfig(n_samples=args.samples, seed=args.seed,
                         u_max=wcfg.u_max, dt=wcfg.dt,
                         gramian_eps=bundle.train_config.gramian_eps,
                         delta=overrides.pop("delta", delta),
                         r_goal=overrides.pop("r_goal", r_goal), **overrides)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    problem = PlanProblem(
        x_init_image=world.render(start, obstacles, wcfg),
        goal_image=world.render(goal, obstacles, wcfg),
        env_image=world.render_env(obstacles, wcfg),
        obstacle_features=world.obstacle_feature_vector(obstacles, wcfg.k_max),
        r_goal=prob_r_goal, true_obstacles=obstacles,
        start_state=start, goal_state=goal)
    t0 = time.perf_counter()
    result = l2rrt_plan(bundle.model, bundle.collision, problem, cfg,
                        bundle.sample_bank)
    doc = result.to_json_dict()
    doc["stats"]["wall_ms"] = (time.perf_counter() - t0) * 1e3
    if not result.solved:
        doc["cost"] = None
    json.dump(doc, sys.stdout)
    sys.stdout.write("\n")
    if args.dump_decoded and result.decoded is not None:
        side = bundle.model.image_side
        frames = np.asarray(result.decoded, dtype=np.float32)
        data.write_dataset(args.dump_decoded, "decoded",
                           {"frames": frames.reshape(-1, side, side)},
                           {"status": result.status})
    return 0 if result.solved else 1


def cmd_bench(args) -> int:
    overrides = _parse_set(args.set)
    try:
        spec = bench_mod.BenchSpec.from_dict(_load_config_dict(args.spec, overrides))
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    log = _log(args)
    rows = bench_mod.run_benchmark(spec, log=log)
    confusion = None
    if spec.model_path and os.path.exists(spec.model_path):
        metrics = ModelBundle.load(spec.model_path).collision_metrics
        if metrics:
            confusion = metrics.get("confusion")
    paths = report.emit_report(rows, args.out, confusion)
    if log:
        for p in paths:
            log(f"wrote {p}")
    return 0


def cmd_report(args) -> int:
    paths = report.regenerate_report(args.indir)
    log = _log(args)
    if log:
        for p in paths:
            log(f"wrote {p}")
    return 0


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="lsbmp",
        description="Latent-space motion planning: data, training, planning, "
                    "and benchmarks for a visual planar robot.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a training dataset")
    p.add_argument("--kind", choices=("dyn", "cc"), required=True)
    p.add_argument("--envs", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--traj-len", type=int, default=10)
    p.add_argument("--pairs", type=int, default=10)
    p.add_argument("--config", help="world config JSON")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the latent model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="training config JSON")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-cc", help="train the collision classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="training config JSON")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_train_cc)

    p = sub.add_parser("plan", help="plan one problem in latent space")
    p.add_argument("--model", required=True)
    p.add_argument("--problem", required=True)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-decoded", help="write decoded frames (LSBD1)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("bench", help="run a benchmark campaign")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="regenerate report files from bench.csv")
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_report)

    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, nn.NumericError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
