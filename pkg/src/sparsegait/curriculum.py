"""Per-environment difficulty assignment with relaxed demotion.

Promotion follows success (finishing near the target); demotion is
relaxed: an environment only drops a level when the policy fails to
beat the progress a random-action policy makes on that level, so a
policy keeps interacting with a level until it overcomes it.  Finishing
the top level reshuffles to a uniform random level to prevent
catastrophic forgetting of easy terrain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .configs import CurriculumConfig, RandomizationConfig
from .terrain import TerrainBank, TerrainType


@dataclass
class EpisodeOutcome:
    final_distance: float      # to target, meters
    progress: float            # initial minus final distance to target
    terminated: bool           # failure termination (else timeout)


def update_level(outcome: EpisodeOutcome, current_level: int,
                 state: "CurriculumState") -> int:
    """Next difficulty level for one environment after one episode."""
    cfg = state.cfg
    lo, hi = state.level_range
    if outcome.final_distance < cfg.promote_radius:
        if current_level >= hi and cfg.max_level_reshuffle:
            return int(state.rng.integers(lo, hi + 1))
        return min(current_level + 1, hi)
    if cfg.strict:
        return max(current_level - 1, lo)
    baseline = state.baselines.get(current_level, cfg.baseline_fallback)
    if outcome.progress <= baseline:
        return max(current_level - 1, lo)
    return current_level


def update_level_velocity(forward_disp: float, commanded_disp: float,
                          current_level: int,
                          state: "CurriculumState") -> int:
    """Velocity-tracking curriculum (ablation mode): promote when the
    robot covers at least half the commanded distance, demote below a
    quarter."""
    lo, hi = state.level_range
    if forward_disp >= 0.5 * commanded_disp:
        if current_level >= hi and state.cfg.max_level_reshuffle:
            return int(state.rng.integers(lo, hi + 1))
        return min(current_level + 1, hi)
    if forward_disp < 0.25 * commanded_disp:
        return max(current_level - 1, lo)
    return current_level


class CurriculumState:
    """Levels for a batch of environments plus the random baselines."""

    def __init__(self, cfg: CurriculumConfig, level_range: tuple[int, int],
                 n_envs: int, seed: int = 0):
        self.cfg = cfg
        self.level_range = level_range
        self.levels = np.full(n_envs, level_range[0], dtype=np.int64)
        self.baselines: dict[int, float] = {}
        self.rng = np.random.Generator(np.random.PCG64(seed))

    def on_episode_end(self, env_idx: int, outcome: EpisodeOutcome) -> int:
        new = update_level(outcome, int(self.levels[env_idx]), self)
        self.levels[env_idx] = new
        return new

    def on_episode_end_velocity(self, env_idx: int, forward_disp: float,
                                commanded_disp: float) -> int:
        new = update_level_velocity(forward_disp, commanded_disp,
                                    int(self.levels[env_idx]), self)
        self.levels[env_idx] = new
        return new

    def histogram(self) -> list[int]:
        lo, hi = self.level_range
        return np.bincount(self.levels - lo, minlength=hi - lo + 1).tolist()


def estimate_random_baseline(level: int, terrain_type: TerrainType,
                             n_episodes: int, bank: TerrainBank,
                             randomization: RandomizationConfig,
                             seed: int = 0, batch: int = 64) -> float:
    """Mean progress-toward-target of uniform random actions.

    Runs complete episodes on the given level and returns the average
    displacement toward the target before termination or timeout.
    ``n_episodes`` of zero skips simulation and returns the documented
    constant fallback.
    """
    from .sim import ACTION_DIM, VecEnv  # deferred: sim imports rewards

    if n_episodes <= 0:
        return 0.25
    batch = min(batch, n_episodes)
    env = VecEnv(bank, batch, randomization, seed=seed)
    rng = np.random.Generator(np.random.PCG64(seed + 1))
    total = 0.0
    count = 0
    env.reset_all(np.full(batch, level))
    d0 = np.linalg.norm(env.target - env.pos[:, :2], axis=1)
    while count < n_episodes:
        actions = rng.uniform(-1.0, 1.0, (batch, ACTION_DIM))
        _, events = env.step(actions)
        done = events.done
        if done.any():
            d = np.linalg.norm(env.target[done] - env.pos[done, :2], axis=1)
            total += float((d0[done] - d).sum())
            count += int(done.sum())
            idx = np.nonzero(done)[0]
            env.reset_envs(idx, np.full(idx.size, level))
            d0[idx] = np.linalg.norm(env.target[idx] - env.pos[idx, :2],
                                     axis=1)
    return total / count


def estimate_baselines(levels: tuple[int, int], terrain_type: TerrainType,
                       n_episodes: int, bank: TerrainBank,
                       randomization: RandomizationConfig,
                       seed: int = 0) -> dict[int, float]:
    return {
        level: estimate_random_baseline(level, terrain_type, n_episodes,
                                        bank, randomization, seed + level)
        for level in range(levels[0], levels[1] + 1)
    }
