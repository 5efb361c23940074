import numpy as np
import pytest
import torch

from sparsegait import terrain
from sparsegait.configs import task_randomization
from sparsegait.sim import NOMINAL_OFFSETS, VecEnv


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def flat_bank():
    return terrain.TerrainBank.from_grids([terrain.flat_grid()])


@pytest.fixture(scope="session")
def stones_bank():
    return terrain.TerrainBank.build(terrain.TerrainType.STONES_EVERYWHERE,
                                     (0, 3), 2, seed=1)


def make_flat_env(flat_bank, n, seed=0, **kwargs):
    env = VecEnv(flat_bank, n,
                 task_randomization(terrain.TerrainType.STONES_EVERYWHERE),
                 seed=seed, **kwargs)
    env.reset_all(np.zeros(n, dtype=int))
    return env


def randomize_env_state(env, rng, mixed_contact=True):
    """Scatter base/feet state near the origin for symmetry tests."""
    n = env.n
    env.pos[:, :2] = rng.uniform(-1.5, 1.5, (n, 2))
    env.pos[:, 2] = rng.uniform(0.45, 0.7, n)
    env.yaw[:] = rng.uniform(-np.pi, np.pi, n)
    env.rp[:] = rng.uniform(-0.3, 0.3, (n, 2))
    env.vel[:] = rng.uniform(-1, 1, (n, 3))
    env.rates[:] = rng.uniform(-1, 1, (n, 3))
    c, s = np.cos(env.yaw), np.sin(env.yaw)
    for i in range(4):
        off = NOMINAL_OFFSETS[i] + rng.uniform(-0.2, 0.2, (n, 3)) * [1, 1, 0.5]
        env.feet[:, i, 0] = env.pos[:, 0] + c * off[:, 0] - s * off[:, 1]
        env.feet[:, i, 1] = env.pos[:, 1] + s * off[:, 0] + c * off[:, 1]
        env.feet[:, i, 2] = env.pos[:, 2] + off[:, 2]
    if mixed_contact:
        env.contact[:] = rng.random((n, 4)) < 0.5
    env.feet[..., 2] = np.where(env.contact, 0.0, env.feet[..., 2])
    env.feet_vel[:] = rng.uniform(-1, 1, (n, 4, 3)) * ~env.contact[..., None]
    env.prev_action[:] = rng.uniform(-1, 1, (n, 12))
    env.com_bias[:] = rng.uniform(-0.1, 0.1, (n, 3))
    env.target[:] = rng.uniform(-3, 3, (n, 2))
    env.target_yaw[:] = rng.uniform(-np.pi, np.pi, n)
    env.steps[:] = 5
    return env.get_state()
