"""Exploration stack: distillation curiosity and symmetry augmentation.

Curiosity is the prediction error of a trainable network distilling a
frozen random network on visited (observation, action) pairs: novel
pairs score high, familiar ones decay toward zero.

The robot's left-right and front-back symmetry lets every transition be
replayed as four: identity, LR mirror, FB mirror and their composition.
Mirrors are pure sign/permutation tables on the observation and action
vectors, so the Klein four-group laws hold exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .configs import RndConfig
from .nets import RunningNorm, mlp
from .sim import ACTION_DIM, N_LEGS, OBS_DIM, OBS_SLICES
from .terrain import SCAN_SHAPE

MIRRORS = ("LR", "FB", "LRFB")

# Per-mirror leg relabeling and per-leg (x, y, z) component signs.
_LEG_PERM = {"LR": [1, 0, 3, 2], "FB": [2, 3, 0, 1], "LRFB": [3, 2, 1, 0]}
_LEG_SIGN = {"LR": [1.0, -1.0, 1.0], "FB": [-1.0, 1.0, 1.0],
             "LRFB": [-1.0, -1.0, 1.0]}
_VEC3_SIGN = _LEG_SIGN  # world/base 3-vectors mirror the same way
_RATE_SIGN = {"LR": [-1.0, 1.0, -1.0], "FB": [1.0, -1.0, -1.0],
              "LRFB": [-1.0, -1.0, 1.0]}
_TARGET_SIGN = {"LR": [1.0, -1.0], "FB": [-1.0, 1.0], "LRFB": [-1.0, -1.0]}
# Heading error encoded as (cos, sin); every mirror is a sign map on it.
_HEADING_SIGN = {"LR": [1.0, -1.0], "FB": [1.0, -1.0], "LRFB": [1.0, 1.0]}


@dataclass(frozen=True)
class SymmetryMap:
    """Sign/permutation tables; x_mirrored = x[perm] * sign."""

    obs_perm: np.ndarray
    obs_sign: np.ndarray
    act_perm: np.ndarray
    act_sign: np.ndarray


def _leg_tables(which: str) -> tuple[np.ndarray, np.ndarray]:
    perm = np.empty(ACTION_DIM, dtype=np.int64)
    sign = np.empty(ACTION_DIM)
    for leg in range(N_LEGS):
        src = _LEG_PERM[which][leg]
        perm[3 * leg:3 * leg + 3] = np.arange(3 * src, 3 * src + 3)
        sign[3 * leg:3 * leg + 3] = _LEG_SIGN[which]
    return perm, sign


def _scan_perm(which: str) -> np.ndarray:
    nx, ny = SCAN_SHAPE
    idx = np.arange(nx * ny).reshape(nx, ny)
    if which in ("FB", "LRFB"):
        idx = idx[::-1, :]
    if which in ("LR", "LRFB"):
        idx = idx[:, ::-1]
    return idx.reshape(-1)


def build_symmetry_map(which: str) -> SymmetryMap:
    if which not in MIRRORS:
        raise ValueError(f"unknown mirror {which!r}; expected one of {MIRRORS}")
    perm = np.arange(OBS_DIM, dtype=np.int64)
    sign = np.ones(OBS_DIM)

    def put(name, block_sign, block_perm=None):
        lo, hi = OBS_SLICES[name]
        if block_perm is not None:
            perm[lo:hi] = lo + block_perm
        sign[lo:hi] = block_sign

    put("lin_vel", _VEC3_SIGN[which])
    put("ang_vel", _RATE_SIGN[which])
    put("gravity", _VEC3_SIGN[which])
    leg_perm, leg_sign = _leg_tables(which)
    for name in ("q", "qdot", "prev_action"):
        put(name, leg_sign, leg_perm)
    put("scan", 1.0, _scan_perm(which))
    put("rel_target", _TARGET_SIGN[which])
    put("heading_err", _HEADING_SIGN[which])
    act_perm, act_sign = _leg_tables(which)
    return SymmetryMap(obs_perm=perm, obs_sign=sign,
                       act_perm=act_perm, act_sign=act_sign)


SYMMETRY_MAPS = {which: build_symmetry_map(which) for which in MIRRORS}


def mirror(sample: tuple[np.ndarray, np.ndarray], which: str):
    """Mirror an (observation, action) sample; batched over axis 0."""
    if which not in SYMMETRY_MAPS:
        raise ValueError(f"unknown mirror {which!r}; expected one of {MIRRORS}")
    m = SYMMETRY_MAPS[which]
    obs, act = sample
    return (np.asarray(obs)[..., m.obs_perm] * m.obs_sign,
            np.asarray(act)[..., m.act_perm] * m.act_sign)


_ACTION_LIKE_KEYS = ("actions", "old_mu")


def augment(batch: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Emit identity + three mirrored copies of a rollout batch.

    Mirrored samples reuse the original's advantage, return, value and
    old log-probability; observations and action-space vectors (the
    action itself, and the policy mean that generated it) transform.
    """
    out: dict[str, np.ndarray] = {}
    for key, value in batch.items():
        if key == "obs":
            copies = [value] + [
                value[..., SYMMETRY_MAPS[w].obs_perm]
                * SYMMETRY_MAPS[w].obs_sign.astype(value.dtype)
                for w in MIRRORS]
        elif key in _ACTION_LIKE_KEYS:
            copies = [value] + [
                value[..., SYMMETRY_MAPS[w].act_perm]
                * SYMMETRY_MAPS[w].act_sign.astype(value.dtype)
                for w in MIRRORS]
        else:
            copies = [value] * (1 + len(MIRRORS))
        out[key] = np.concatenate(copies, axis=0)
    return out


# ----------------------------------------------------------------------
# World-state mirrors: used to check that the simulator dynamics commute
# with each mirror (the justification for reusing training targets).

_STATE_VEC3 = {"vel": _VEC3_SIGN, "com_bias": _VEC3_SIGN, "rates": _RATE_SIGN}
_STATE_VEC2 = {"target": _TARGET_SIGN, "drift": _TARGET_SIGN,
               "spawn": _TARGET_SIGN, "vel_cmd": _TARGET_SIGN}
_RP_SIGN = {"LR": [-1.0, 1.0], "FB": [1.0, -1.0], "LRFB": [-1.0, -1.0]}
_YAW_SIGN = {"LR": -1.0, "FB": -1.0, "LRFB": 1.0}


def mirror_sim_state(state: dict[str, np.ndarray], which: str) -> dict:
    """Mirror a VecEnv state dict through a fixed world isometry.

    LR reflects across the world y=0 plane; FB across x=0 with the
    front/hind leg relabeling; LRFB is their composition (a half-turn
    about the origin with a diagonal relabeling).  Terrain must be
    symmetric under the same map for dynamics equivariance to hold.
    """
    if which not in MIRRORS:
        raise ValueError(f"unknown mirror {which!r}; expected one of {MIRRORS}")
    s = {k: np.array(v) for k, v in state.items()}
    v3 = np.asarray(_VEC3_SIGN[which])
    leg_perm = _LEG_PERM[which]
    act_perm, act_sign = _leg_tables(which)

    s["pos"] = state["pos"] * v3
    for name in ("yaw", "target_yaw", "spawn_yaw", "yaw_cmd"):
        s[name] = state[name] * _YAW_SIGN[which]
    s["rp"] = state["rp"] * np.asarray(_RP_SIGN[which])
    for name, table in _STATE_VEC3.items():
        s[name] = state[name] * np.asarray(table[which])
    for name, table in _STATE_VEC2.items():
        s[name] = state[name] * np.asarray(table[which])
    s["feet"] = state["feet"][:, leg_perm, :] * v3
    s["feet_vel"] = state["feet_vel"][:, leg_perm, :] * v3
    s["contact"] = state["contact"][:, leg_perm]
    s["prev_action"] = state["prev_action"][:, act_perm] * act_sign
    s["prev_targets"] = state["prev_targets"][:, act_perm] * act_sign
    return s


def mirror_action(action: np.ndarray, which: str) -> np.ndarray:
    m = SYMMETRY_MAPS[which]
    return np.asarray(action)[..., m.act_perm] * m.act_sign


# ----------------------------------------------------------------------
# Random network distillation

class _torch_seed:
    """Temporarily seed torch's global RNG (network init determinism)."""

    def __init__(self, seed: int):
        self.seed = seed

    def __enter__(self):
        self.state = torch.random.get_rng_state()
        torch.manual_seed(self.seed)

    def __exit__(self, *exc):
        torch.random.set_rng_state(self.state)
        return False


class RndPair:
    """Trainable M1 distilling a frozen random M2 on (s, a) inputs."""

    def __init__(self, obs_dim: int, act_dim: int, cfg: RndConfig,
                 seed: int = 0):
        self.cfg = cfg
        self.in_dim = obs_dim + act_dim
        with _torch_seed(seed):
            self.m1 = mlp(self.in_dim, cfg.m1_hidden, cfg.output_dim)
            self.m2 = mlp(self.in_dim, cfg.m2_hidden, cfg.output_dim)
        for p in self.m2.parameters():
            p.requires_grad_(False)
        self.normalizer = RunningNorm(self.in_dim)
        self.optimizer = torch.optim.Adam(self.m1.parameters(), lr=cfg.lr)

    def _inputs(self, obs, act) -> torch.Tensor:
        x = np.concatenate([np.asarray(obs), np.asarray(act)], axis=-1)
        if not np.isfinite(x).all():
            raise ValueError("non-finite curiosity input")
        if not self.normalizer.initialized:
            raise RuntimeError("curiosity normalizer not warmed up")
        return torch.from_numpy(self.normalizer.normalize(x))

    def update_normalizer(self, obs, act) -> None:
        x = np.concatenate([np.asarray(obs), np.asarray(act)], axis=-1)
        self.normalizer.update(x)

    def curiosity_reward(self, obs, act) -> np.ndarray:
        """c_curio * mean_k |M1(s,a)_k - M2(s,a)_k| per sample."""
        if self.cfg.reward_weight == 0.0:
            return np.zeros(np.asarray(obs).shape[0])
        with torch.no_grad():
            x = self._inputs(obs, act)
            err = (self.m1(x) - self.m2(x)).abs().mean(dim=-1)
        return self.cfg.reward_weight * err.numpy().astype(np.float64)

    def rnd_update(self, obs, act) -> float:
        """One optimizer step fitting M1 to M2 with mean L1 loss."""
        if np.asarray(obs).shape[0] == 0:
            raise ValueError("empty distillation batch")
        x = self._inputs(obs, act)
        with torch.no_grad():
            target = self.m2(x)
        loss = self.cfg.opt_weight * (self.m1(x) - target).abs().mean()
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        return float(loss.detach())

    def m2_checksum(self) -> float:
        return float(sum(p.abs().sum() for p in self.m2.parameters()))
