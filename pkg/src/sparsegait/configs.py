"""Dataclass configuration for simulation, training and evaluation.

YAML config files mirror the dataclass fields; ``load_train_config``
applies environment overrides (SPARSEGAIT_SEED, SPARSEGAIT_WORKERS).
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .terrain import TerrainType


@dataclass(frozen=True)
class RandomizationConfig:
    """Per-task episode randomization ranges."""

    episode_length_range: tuple[float, float]
    target_distance_range: tuple[float, float]
    scan_drift_range: tuple[float, float] = (0.0, 0.0)
    com_bias_x: tuple[float, float] = (0.0, 0.0)
    com_bias_y: tuple[float, float] = (0.0, 0.0)
    com_bias_z: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        for name in ("episode_length_range", "target_distance_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} is empty: ({lo}, {hi})")


_TASK_RANDOMIZATION = {
    TerrainType.STONES_EVERYWHERE: RandomizationConfig(
        episode_length_range=(5.0, 7.0),
        target_distance_range=(1.5, 4.9),
    ),
    TerrainType.STONES_2ROWS: RandomizationConfig(
        episode_length_range=(6.0, 8.0),
        target_distance_range=(3.5, 4.5),
        scan_drift_range=(-0.05, 0.05),
    ),
    TerrainType.BALANCE_BEAMS: RandomizationConfig(
        episode_length_range=(8.0, 10.0),
        target_distance_range=(3.5, 4.5),
        scan_drift_range=(-0.025, 0.025),
        com_bias_x=(-0.15, 0.15),
        com_bias_y=(-0.05, 0.05),
        com_bias_z=(-0.1, 0.2),
    ),
    TerrainType.STEPPING_BEAMS: RandomizationConfig(
        episode_length_range=(5.0, 7.0),
        target_distance_range=(2.5, 4.0),
    ),
}


def task_randomization(terrain_type: TerrainType) -> RandomizationConfig:
    return _TASK_RANDOMIZATION[terrain_type]


@dataclass(frozen=True)
class RndConfig:
    enabled: bool = True
    output_dim: int = 16
    reward_weight: float = 1.0
    opt_weight: float = 1.0
    m1_hidden: tuple[int, ...] = (128, 128)
    m2_hidden: tuple[int, ...] = (256, 256)
    lr: float = 1e-3


@dataclass(frozen=True)
class CurriculumConfig:
    promote_radius: float = 1.0
    max_level_reshuffle: bool = True
    strict: bool = False
    baseline_episodes: int = 1000
    baseline_fallback: float = 0.25


@dataclass
class TrainConfig:
    """Full training configuration; defaults follow the reference setup."""

    terrain: TerrainType = TerrainType.STONES_EVERYWHERE
    profile: str = "generalist"
    levels: tuple[int, int] = (0, 9)
    n_envs: int = 4096
    steps_per_iter: int = 48
    total_iterations: int = 8000
    discount: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    entropy_coef: float = 0.005
    value_coef: float = 1.0
    epochs: int = 5
    minibatches: int = 4
    lr: float = 1e-3
    adaptive_lr: bool = True
    kl_target: float = 0.01
    max_grad_norm: float = 1.0
    hidden: tuple[int, ...] = (512, 256, 128)
    init_action_std: float = 1.0
    rnd: RndConfig = field(default_factory=RndConfig)
    symmetry_enabled: bool = True
    velocity_mode: bool = False
    move_in_direction_iters: int = 150
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    n_terrain_variants: int = 16
    seed: int = 0
    workers: int = 0            # torch threads; 0 = library default
    stage: str = "generalist"   # generalist | finetune
    checkpoint_every: int = 500
    eval_every: int = 0         # 0 disables in-loop evaluation
    eval_trials: int = 96
    # Early stop: iterate until every (level, traverse_m, rate) is met.
    success_stop: tuple[tuple[int, float, float], ...] = ()

    def config_hash(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True,
                          default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def desk_config(**overrides) -> TrainConfig:
    """Desk-scale preset: small nets and env counts that train on CPUs.

    Reference-scale settings (4096 envs, (512, 256, 128) nets, 8000
    iterations) assume a large GPU budget; this preset keeps every
    algorithmic ingredient but shrinks capacity so a run finishes on a
    laptop-class machine.
    """
    cfg = TrainConfig(
        levels=(0, 3),
        n_envs=256,
        total_iterations=1500,
        hidden=(128, 128),
        rnd=RndConfig(),
        n_terrain_variants=8,
        epochs=4,
        checkpoint_every=500,
        eval_every=50,
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


def _tupleize(value):
    if isinstance(value, list):
        return tuple(_tupleize(v) for v in value)
    return value


def _dataclass_from_dict(cls, data: dict):
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if f.name == "terrain":
            value = TerrainType(value)
        elif f.name == "rnd" and isinstance(value, dict):
            value = _dataclass_from_dict(RndConfig, value)
        elif f.name == "curriculum" and isinstance(value, dict):
            value = _dataclass_from_dict(CurriculumConfig, value)
        else:
            value = _tupleize(value)
        kwargs[f.name] = value
    return cls(**kwargs)


def load_train_config(path: str | Path) -> TrainConfig:
    """Load a TrainConfig from YAML, then apply env-var overrides."""
    with open(path) as f:
        data = yaml.safe_load(f) or {}
    cfg = _dataclass_from_dict(TrainConfig, data)
    if os.environ.get("SPARSEGAIT_SEED"):
        cfg.seed = int(os.environ["SPARSEGAIT_SEED"])
    if os.environ.get("SPARSEGAIT_WORKERS"):
        cfg.workers = int(os.environ["SPARSEGAIT_WORKERS"])
    return cfg


def save_train_config(cfg: TrainConfig, path: str | Path) -> None:
    data = dataclasses.asdict(cfg)
    data["terrain"] = cfg.terrain.value
    with open(path, "w") as f:
        yaml.safe_dump(data, f, sort_keys=False)
