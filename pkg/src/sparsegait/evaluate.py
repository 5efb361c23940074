"""Evaluation protocols: success-rate curves and the transfer matrix.

Success means the robot advances a given distance along the terrain
axis without a failure termination.  Episodes run batched with the
deterministic action mean; every protocol is reproducible from
(checkpoint, spec seeds).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from . import rewards
from .configs import task_randomization
from .sim import ACTION_DIM, VecEnv
from .terrain import TerrainBank, TerrainType


@dataclass(frozen=True)
class EvalSpec:
    terrain_type: TerrainType
    levels: tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6, 7, 8, 9)
    traverse_distance: float = 6.0
    n_trials: int = 100
    n_terrains: int = 10
    success_threshold: float = 0.8
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        if self.n_trials % self.n_terrains != 0:
            raise ValueError("n_trials must be divisible by n_terrains")


@runtime_checkable
class Agent(Protocol):
    """Deterministic evaluation agent."""

    def act_eval(self, obs: np.ndarray) -> np.ndarray: ...


class PolicyAgent:
    """Wraps a trained policy into the evaluation Agent interface."""

    def __init__(self, policy):
        self.policy = policy

    def act_eval(self, obs: np.ndarray) -> np.ndarray:
        return self.policy.act_deterministic(obs)


def _episode_length(traverse: float, rand) -> float:
    return max(rand.episode_length_range[1], traverse / 0.5 + 2.0)


def build_eval_bank(spec: EvalSpec, levels: tuple[int, int]) -> TerrainBank:
    return TerrainBank.build(spec.terrain_type, levels, spec.n_terrains,
                             seed=spec.seeds[0] * 7919 + 23)


def run_trials(agent: Agent, bank: TerrainBank, level: int, spec: EvalSpec,
               seed: int, velocity_command: float | None = None,
               dump_path: str | Path | None = None,
               profile: rewards.RewardProfile | None = None) -> np.ndarray:
    """Run ``n_trials`` one-episode evaluations; returns success flags.

    Trials cycle through the bank's terrain variants.  When
    ``dump_path`` is set, a JSONL record is written per (trial, step)
    from which the success statistics can be re-derived offline.
    """
    rand = task_randomization(spec.terrain_type)
    n = spec.n_trials
    env = VecEnv(bank, n, rand, seed=seed * 65537 + 1,
                 velocity_mode=velocity_command is not None)
    T = _episode_length(spec.traverse_distance, rand)
    for trial in range(n):
        command = {
            "variant": trial % spec.n_terrains,
            "target_distance": spec.traverse_distance + 0.5,
            "target_lateral": 0.0,
            "target_heading": 0.0,
            "episode_length": T,
            "spawn_yaw": 0.0,
        }
        if velocity_command is not None:
            command["velocity"] = velocity_command
        env.reset_envs(np.array([trial]), np.array([level]), command)

    dump = open(dump_path, "w") if dump_path else None
    profile = profile or rewards.named_profile("generalist")
    active = np.ones(n, dtype=bool)
    success = np.zeros(n, dtype=bool)
    step = 0
    try:
        while active.any():
            obs = env.build_observation()
            action = np.asarray(agent.act_eval(obs), dtype=np.float64)
            state, events = env.step(action)
            if hasattr(agent, "intervene"):
                agent.intervene(env, active)
                events = env.check_termination()
                env.max_forward = np.maximum(
                    env.max_forward, env.pos[:, 0] - env.spawn[:, 0])
            reached = env.max_forward >= spec.traverse_distance
            success |= active & reached & ~events.terminated
            if dump is not None:
                breakdown = rewards.evaluate(state, profile)
                _dump_step(dump, env, events, breakdown, active, step,
                           spec.traverse_distance)
            active &= ~events.done
            step += 1
    finally:
        if dump is not None:
            dump.close()
    return success


def _dump_step(f, env: VecEnv, events, breakdown, active, step, traverse):
    for i in np.nonzero(active)[0]:
        record = {
            "trial": int(i),
            "step": step,
            "t": round(float(env.steps[i] * env.params.dt), 6),
            "pos": [float(v) for v in env.pos[i]],
            "yaw": float(env.yaw[i]),
            "roll": float(env.rp[i, 0]),
            "pitch": float(env.rp[i, 1]),
            "feet": [[float(v) for v in foot] for foot in env.feet[i]],
            "contacts": [bool(v) for v in env.contact[i]],
            "forward": float(env.max_forward[i]),
            "traverse_distance": traverse,
            "terminated": bool(events.terminated[i]),
            "timeout": bool(events.timeout[i]),
            "reward_total": float(breakdown.total[i]),
            "terms": {k: float(v[i]) for k, v in sorted(
                breakdown.terms.items())},
        }
        f.write(json.dumps(record, sort_keys=True) + "\n")


def successes_from_dump(path: str | Path) -> dict[int, bool]:
    """Re-derive per-trial success flags from a trajectory dump."""
    success: dict[int, bool] = {}
    with open(path) as f:
        for line in f:
            r = json.loads(line)
            trial = r["trial"]
            success.setdefault(trial, False)
            if (r["forward"] >= r["traverse_distance"]
                    and not r["terminated"]):
                success[trial] = True
    return success


@dataclass
class CurvePoint:
    x: float
    mean: float
    std: float


def eval_success_vs_level(agents: list[Agent], spec: EvalSpec,
                          velocity_command: float | None = None
                          ) -> list[CurvePoint]:
    """Success rate per difficulty level, mean/std across agents."""
    bank = build_eval_bank(spec, (min(spec.levels), max(spec.levels)))
    points = []
    for level in spec.levels:
        rates = [run_trials(agent, bank, level, spec, seed=spec.seeds[0] + 101,
                            velocity_command=velocity_command).mean()
                 for agent in agents]
        points.append(CurvePoint(float(level), float(np.mean(rates)),
                                 float(np.std(rates))))
    return points


def eval_success_vs_distance(agents: list[Agent], spec: EvalSpec,
                             distances: tuple[float, ...] = (1, 2, 3, 4, 5, 6),
                             velocity_command: float | None = None
                             ) -> list[CurvePoint]:
    """Success rate over traverse distances on the hardest spec level."""
    level = max(spec.levels)
    bank = build_eval_bank(spec, (level, level))
    points = []
    for dist in distances:
        dspec = EvalSpec(terrain_type=spec.terrain_type, levels=(level,),
                         traverse_distance=float(dist),
                         n_trials=spec.n_trials, n_terrains=spec.n_terrains,
                         success_threshold=spec.success_threshold,
                         seeds=spec.seeds)
        rates = [run_trials(agent, bank, level, dspec,
                            seed=spec.seeds[0] + 211,
                            velocity_command=velocity_command).mean()
                 for agent in agents]
        points.append(CurvePoint(float(dist), float(np.mean(rates)),
                                 float(np.std(rates))))
    return points


@dataclass
class TransferCell:
    train_terrain: str
    test_terrain: str
    max_level_passing: int | None   # None encodes the "<0" sentinel
    level0_rate: float

    def render(self) -> str:
        if self.max_level_passing is not None:
            return str(self.max_level_passing)
        return "<0" if self.level0_rate >= 0.5 else "--"


def transfer_matrix(policies: dict[str, Agent],
                    terrains: tuple[TerrainType, ...],
                    spec: EvalSpec | None = None) -> list[TransferCell]:
    """Max level each policy passes on each terrain at 80% success.

    A cell is the highest level with success rate >= the threshold over
    the spec's traverse distance; "<0" marks a level-0 rate in
    [0.5, threshold), "--" anything lower.
    """
    cells = []
    base = spec or EvalSpec(terrain_type=terrains[0],
                            traverse_distance=3.5)
    for terrain in terrains:
        tspec = EvalSpec(terrain_type=terrain, levels=base.levels,
                         traverse_distance=base.traverse_distance,
                         n_trials=base.n_trials, n_terrains=base.n_terrains,
                         success_threshold=base.success_threshold,
                         seeds=base.seeds)
        bank = build_eval_bank(tspec, (min(tspec.levels), max(tspec.levels)))
        for name, agent in policies.items():
            best = None
            level0_rate = 0.0
            for level in sorted(tspec.levels):
                rate = run_trials(agent, bank, level, tspec,
                                  seed=tspec.seeds[0] + 307).mean()
                if level == min(tspec.levels):
                    level0_rate = float(rate)
                if rate >= tspec.success_threshold:
                    best = level
            cells.append(TransferCell(train_terrain=name,
                                      test_terrain=terrain.value,
                                      max_level_passing=best,
                                      level0_rate=level0_rate))
    return cells


def write_curve_csv(points: list[CurvePoint], path: str | Path,
                    x_name: str = "level") -> None:
    with open(path, "w") as f:
        f.write(f"{x_name},mean,std\n")
        for p in points:
            f.write(f"{p.x:g},{p.mean:.6f},{p.std:.6f}\n")


def write_matrix_csv(cells: list[TransferCell], path: str | Path) -> None:
    trains = sorted({c.train_terrain for c in cells})
    tests = sorted({c.test_terrain for c in cells})
    lookup = {(c.train_terrain, c.test_terrain): c.render() for c in cells}
    with open(path, "w") as f:
        f.write("train\\test," + ",".join(tests) + "\n")
        for tr in trains:
            f.write(tr + "," + ",".join(lookup[(tr, te)] for te in tests)
                    + "\n")
