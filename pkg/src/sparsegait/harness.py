"""Command-line interface and experiment orchestration.

Subcommands: train, finetune, eval (level-curve / distance-curve /
transfer), ablation, terrain export.  Exit code 0 only on full
completion.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import evaluate, learner, terrain
from .configs import TrainConfig, desk_config, load_train_config
from .evaluate import EvalSpec, PolicyAgent
from .terrain import TerrainType

ABLATION_SETTINGS = ("proposed", "no_navigation", "no_curriculum",
                     "no_curiosity", "no_augmentation")


def ablation_config(setting: str, base: TrainConfig) -> TrainConfig:
    """Map an ablation setting to its toggle set."""
    if setting not in ABLATION_SETTINGS:
        raise ValueError(f"unknown ablation setting {setting!r}; "
                         f"expected one of {ABLATION_SETTINGS}")
    cfg = dataclasses.replace(base)
    if setting == "no_navigation":
        cfg.velocity_mode = True
        cfg.profile = "velocity_ablation"
    elif setting == "no_curriculum":
        cfg.curriculum = dataclasses.replace(cfg.curriculum, strict=True)
    elif setting == "no_curiosity":
        cfg.rnd = dataclasses.replace(cfg.rnd, enabled=False)
    elif setting == "no_augmentation":
        cfg.symmetry_enabled = False
    return cfg


def run_ablation(setting: str, base: TrainConfig, out_dir: str | Path):
    cfg = ablation_config(setting, base)
    return learner.train(cfg, Path(out_dir) / setting)


def load_eval_spec(path: str | Path) -> EvalSpec:
    with open(path) as f:
        data = yaml.safe_load(f) or {}
    if "terrain_type" in data:
        data["terrain_type"] = TerrainType(data["terrain_type"])
    for key in ("levels", "seeds"):
        if key in data:
            data[key] = tuple(data[key])
    if os.environ.get("SPARSEGAIT_SEED"):
        data["seeds"] = (int(os.environ["SPARSEGAIT_SEED"]),)
    return EvalSpec(**data)


def _load_agents(paths):
    agents, metas = [], []
    for path in paths:
        policy, meta = learner.load_checkpoint(path)
        agents.append(PolicyAgent(policy))
        metas.append(meta)
    return agents, metas


def _velocity_command(metas) -> float | None:
    # Fixed forward command for checkpoints trained on velocity tracking.
    if metas and all(m.get("profile") == "velocity_ablation" for m in metas):
        return 0.8
    return None


def _cmd_train(args) -> int:
    cfg = load_train_config(args.config) if args.config else desk_config()
    result = learner.train(cfg, args.out)
    print(f"trained {result.iterations_run} iterations; "
          f"checkpoint {result.checkpoint}")
    return 0


def _cmd_finetune(args) -> int:
    cfg = load_train_config(args.config) if args.config else desk_config()
    result = learner.finetune(getattr(args, "from"), cfg, args.out)
    print(f"finetuned {result.iterations_run} iterations; "
          f"checkpoint {result.checkpoint}")
    return 0


def _cmd_eval(args) -> int:
    spec = load_eval_spec(args.spec)
    agents, metas = _load_agents(args.checkpoint)
    vel = _velocity_command(metas)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.protocol == "level-curve":
        points = evaluate.eval_success_vs_level(agents, spec, vel)
        path = out / "level_curve.csv"
        evaluate.write_curve_csv(points, path, "level")
    elif args.protocol == "distance-curve":
        points = evaluate.eval_success_vs_distance(agents, spec,
                                                   velocity_command=vel)
        path = out / "distance_curve.csv"
        evaluate.write_curve_csv(points, path, "distance")
    else:  # transfer
        policies = {}
        for ckpt, agent, meta in zip(args.checkpoint, agents, metas):
            policies[meta.get("terrain", Path(ckpt).stem)] = agent
        terrains = tuple(TerrainType(t) for t in args.terrains.split(","))
        cells = evaluate.transfer_matrix(policies, terrains, spec)
        path = out / "transfer_matrix.csv"
        evaluate.write_matrix_csv(cells, path)

    if args.dump_traj:
        bank = evaluate.build_eval_bank(spec, (min(spec.levels),
                                               max(spec.levels)))
        evaluate.run_trials(agents[0], bank, min(spec.levels), spec,
                            seed=spec.seeds[0] + 101, velocity_command=vel,
                            dump_path=out / "trajectories.jsonl")
    print(f"wrote {path}")
    return 0


def _cmd_ablation(args) -> int:
    base = load_train_config(args.config) if args.config else desk_config()
    result = run_ablation(args.setting, base, args.out)
    print(f"ablation {args.setting}: {result.iterations_run} iterations; "
          f"checkpoint {result.checkpoint}")
    return 0


def _cmd_terrain_export(args) -> int:
    params = terrain.level_params(TerrainType(args.type), args.level)
    grid = terrain.generate(params, args.seed)
    written = terrain.export(grid, args.out)
    print("wrote " + ", ".join(str(p) for p in written))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsegait",
        description="Train and evaluate sparse-foothold locomotion policies.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy")
    p.add_argument("--config", help="YAML TrainConfig (default: desk preset)")
    p.add_argument("--out", default="runs/train")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("finetune", help="finetune from a checkpoint")
    p.add_argument("--from", required=True, help="generalist checkpoint")
    p.add_argument("--config", help="YAML TrainConfig for the new task")
    p.add_argument("--out", default="runs/finetune")
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("eval", help="evaluation protocols")
    p.add_argument("protocol",
                   choices=["level-curve", "distance-curve", "transfer"])
    p.add_argument("--checkpoint", action="append", required=True,
                   help="policy checkpoint (repeat for multiple seeds)")
    p.add_argument("--spec", required=True, help="YAML EvalSpec")
    p.add_argument("--out", default="runs/eval")
    p.add_argument("--terrains",
                   default=",".join(t.value for t in TerrainType),
                   help="comma list of test terrains (transfer only)")
    p.add_argument("--dump-traj", action="store_true",
                   help="write per-step JSONL trajectories")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablation", help="run one ablation setting")
    p.add_argument("--setting", required=True, choices=ABLATION_SETTINGS)
    p.add_argument("--config", help="base YAML TrainConfig")
    p.add_argument("--out", default="runs/ablation")
    p.set_defaults(func=_cmd_ablation)

    p = sub.add_parser("terrain", help="terrain tools")
    tsub = p.add_subparsers(dest="terrain_command", required=True)
    e = tsub.add_parser("export", help="export one generated terrain")
    e.add_argument("--type", required=True,
                   choices=[t.value for t in TerrainType])
    e.add_argument("--level", type=int, required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default="terrain_export")
    e.set_defaults(func=_cmd_terrain_export)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
