"""Actor-critic optimization and the generalist-to-specialist flow.

Training is clipped-surrogate policy optimization with generalized
advantage estimation over a massively batched rollout.  Each iteration:
collect, add curiosity, estimate advantages, mirror-augment, update.
Finetuning restarts the same loop from a saved actor+critic on a new
terrain with fresh optimizer, curriculum and curiosity state.
"""
from __future__ import annotations

import copy
import dataclasses
import json
import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import curriculum as curriculum_mod
from . import exploration, rewards
from .configs import TrainConfig, task_randomization
from .nets import RunningNorm, mlp
from .sim import ACTION_DIM, OBS_DIM, VecEnv
from .terrain import TerrainBank


class PolicyNetwork(nn.Module):
    """Gaussian policy and value function over normalized observations."""

    def __init__(self, obs_dim: int = OBS_DIM, act_dim: int = ACTION_DIM,
                 hidden: tuple[int, ...] = (512, 256, 128),
                 init_action_std: float = 1.0, seed: int = 0):
        super().__init__()
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.hidden = tuple(hidden)
        with exploration._torch_seed(seed):
            self.actor = mlp(obs_dim, self.hidden, act_dim)
            self.critic = mlp(obs_dim, self.hidden, 1)
        self.log_std = nn.Parameter(
            torch.full((act_dim,), math.log(init_action_std)))
        self.normalizer = RunningNorm(obs_dim)

    def _tensor(self, obs: np.ndarray) -> torch.Tensor:
        return torch.from_numpy(self.normalizer.normalize(obs))

    def distribution(self, obs_t: torch.Tensor) -> torch.distributions.Normal:
        mean = self.actor(obs_t)
        return torch.distributions.Normal(mean, self.log_std.exp())

    @torch.no_grad()
    def act(self, obs: np.ndarray):
        """Sample actions; returns (action, log_prob, value, mean)."""
        obs_t = self._tensor(obs)
        mean = self.actor(obs_t)
        std = self.log_std.exp()
        eps = torch.randn_like(mean)
        action = mean + std * eps
        logp = torch.distributions.Normal(mean, std).log_prob(action).sum(-1)
        value = self.critic(obs_t).squeeze(-1)
        return (action.numpy(), logp.numpy(), value.numpy(), mean.numpy())

    @torch.no_grad()
    def act_deterministic(self, obs: np.ndarray) -> np.ndarray:
        return self.actor(self._tensor(obs)).numpy()

    # eval protocols use the Agent interface
    def act_eval(self, obs: np.ndarray) -> np.ndarray:
        return self.act_deterministic(obs)

    @torch.no_grad()
    def value(self, obs: np.ndarray) -> np.ndarray:
        return self.critic(self._tensor(obs)).squeeze(-1).numpy()


# ----------------------------------------------------------------------
# Generalized advantage estimation

def compute_gae(rewards_tn: np.ndarray, values_tn: np.ndarray,
                terminated: np.ndarray, truncated: np.ndarray,
                bootstrap: np.ndarray, discount: float, lam: float):
    """Advantages and value targets over a (T, N) rollout.

    ``terminated`` marks failure ends (no bootstrap), ``truncated``
    marks timeouts and the rollout edge, with ``bootstrap`` holding the
    next-state value to continue from.  Returns per-iteration
    un-normalized advantages plus returns (advantage + value).
    """
    T, N = rewards_tn.shape
    adv = np.zeros((T, N))
    next_values = np.zeros(N)
    carry = np.zeros(N)
    for t in range(T - 1, -1, -1):
        done = terminated[t] | truncated[t]
        next_v = np.where(truncated[t], bootstrap[t],
                          np.where(terminated[t], 0.0, next_values))
        delta = rewards_tn[t] + discount * next_v - values_tn[t]
        carry = delta + discount * lam * np.where(done, 0.0, carry)
        adv[t] = carry
        next_values = values_tn[t]
    returns = adv + values_tn
    return adv, returns


# ----------------------------------------------------------------------
# PPO update

@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    kl: float
    clip_fraction: float
    lr: float
    fault: bool = False


def ppo_update(policy: PolicyNetwork, optimizer: torch.optim.Optimizer,
               batch: dict[str, torch.Tensor], cfg: TrainConfig,
               n_identity: int | None = None) -> UpdateStats:
    """Several epochs of clipped-surrogate minibatch steps.

    The learning rate adapts to keep the measured old/new policy
    divergence near ``cfg.kl_target``.  ``n_identity`` marks how many
    leading samples are un-mirrored originals; the divergence estimate
    uses only those, since mirrored samples carry copied statistics that
    read as spurious divergence until the policy itself is symmetric.
    A non-finite loss aborts the update and restores the pre-update
    parameters.
    """
    obs = batch["obs"]
    actions = batch["actions"]
    old_logp = batch["log_probs"]
    advantages = batch["advantages"]
    returns = batch["returns"]
    old_mu = batch["old_mu"]
    old_sigma = batch["old_sigma"]
    if n_identity is None:
        n_identity = obs.shape[0]

    snapshot = copy.deepcopy(policy.state_dict())
    B = obs.shape[0]
    mb_size = B // cfg.minibatches
    lr = optimizer.param_groups[0]["lr"]
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
             "kl": 0.0, "clip_fraction": 0.0}
    n_updates = 0

    for _ in range(cfg.epochs):
        perm = torch.randperm(B)
        for k in range(cfg.minibatches):
            idx = perm[k * mb_size:(k + 1) * mb_size]
            dist = policy.distribution(obs[idx])
            logp = dist.log_prob(actions[idx]).sum(-1)
            ratio = torch.exp(logp - old_logp[idx])
            adv = advantages[idx]
            surr = ratio * adv
            surr_clipped = torch.clamp(ratio, 1.0 - cfg.clip_ratio,
                                       1.0 + cfg.clip_ratio) * adv
            policy_loss = -torch.min(surr, surr_clipped).mean()
            value = policy.critic(obs[idx]).squeeze(-1)
            value_loss = (value - returns[idx]).square().mean()
            entropy = dist.entropy().sum(-1).mean()
            loss = (policy_loss + cfg.value_coef * value_loss
                    - cfg.entropy_coef * entropy)
            if not torch.isfinite(loss):
                policy.load_state_dict(snapshot)
                return UpdateStats(float("nan"), float("nan"), float("nan"),
                                   float("nan"), 0.0, lr, fault=True)

            with torch.no_grad():
                keep = idx < n_identity
                kid = idx[keep] if keep.any() else idx
                sigma = policy.log_std.exp()
                mean_id = dist.mean[keep] if keep.any() else dist.mean
                kl = (torch.log(sigma / old_sigma)
                      + (old_sigma.square()
                         + (old_mu[kid] - mean_id).square())
                      / (2.0 * sigma.square()) - 0.5).sum(-1).mean()
                kl_val = float(kl)
                if cfg.adaptive_lr and np.isfinite(kl_val):
                    if kl_val > 2.0 * cfg.kl_target:
                        lr = max(1e-5, lr / 1.5)
                    elif 0.0 < kl_val < cfg.kl_target / 2.0:
                        lr = min(1e-2, lr * 1.5)
                    for group in optimizer.param_groups:
                        group["lr"] = lr

            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(policy.parameters(), cfg.max_grad_norm)
            optimizer.step()

            stats["policy_loss"] += float(policy_loss.detach())
            stats["value_loss"] += float(value_loss.detach())
            stats["entropy"] += float(entropy.detach())
            stats["kl"] += kl_val
            stats["clip_fraction"] += float(
                ((ratio.detach() - 1.0).abs() > cfg.clip_ratio).float().mean())
            n_updates += 1

    for key in stats:
        stats[key] /= max(n_updates, 1)
    return UpdateStats(lr=lr, **stats)


# ----------------------------------------------------------------------
# Checkpoints

CHECKPOINT_MAGIC = b"SGAITCK1"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _policy_arrays(policy: PolicyNetwork) -> dict[str, np.ndarray]:
    arrays = {}
    for name, p in policy.state_dict().items():
        arrays[name] = p.detach().numpy().astype("<f4")
    norm = policy.normalizer
    arrays["obs_norm.mean"] = norm.mean.astype("<f4")
    arrays["obs_norm.var"] = (norm.m2 / max(norm.count, 1.0)).astype("<f4")
    return arrays


def save_checkpoint(path: str | Path, policy: PolicyNetwork,
                    metadata: dict) -> None:
    """Versioned container: magic, version, JSON header, raw f32 data."""
    arrays = _policy_arrays(policy)
    meta = dict(metadata)
    meta["obs_dim"] = policy.obs_dim
    meta["act_dim"] = policy.act_dim
    meta["hidden"] = list(policy.hidden)
    meta["obs_norm_count"] = float(policy.normalizer.count)
    header = {
        "arrays": [{"name": k, "shape": list(v.shape)}
                   for k, v in arrays.items()],
        "meta": meta,
    }
    blob = json.dumps(header, sort_keys=True,
                      separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for v in arrays.values():
            f.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path, expect_config_hash: str | None = None):
    """Load a checkpoint; returns (PolicyNetwork, metadata)."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic; not a policy checkpoint")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    if len(raw) < 16 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(raw[16:16 + hlen])
    meta = header["meta"]

    offset = 16 + hlen
    arrays = {}
    for spec in header["arrays"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = count * 4
        if offset + nbytes > len(raw):
            raise CheckpointError(
                f"{path}: truncated data for array {spec['name']!r}")
        arrays[spec["name"]] = np.frombuffer(
            raw, dtype="<f4", count=count, offset=offset).reshape(spec["shape"])
        offset += nbytes

    if expect_config_hash and meta.get("config_hash") != expect_config_hash:
        warnings.warn(
            "checkpoint config hash "
            f"{meta.get('config_hash')!r} != expected {expect_config_hash!r}; "
            "loading anyway", stacklevel=2)

    policy = PolicyNetwork(meta["obs_dim"], meta["act_dim"],
                           tuple(meta["hidden"]))
    state = {}
    for name, tensor in policy.state_dict().items():
        if name not in arrays:
            raise CheckpointError(f"{path}: missing parameter {name!r}")
        if list(arrays[name].shape) != list(tensor.shape):
            raise CheckpointError(
                f"{path}: shape mismatch for {name!r}: "
                f"{list(arrays[name].shape)} vs {list(tensor.shape)}")
        state[name] = torch.from_numpy(arrays[name].astype(np.float32))
    policy.load_state_dict(state)
    count = float(meta.get("obs_norm_count", 0.0))
    policy.normalizer.load({
        "count": count,
        "mean": arrays["obs_norm.mean"].astype(np.float64),
        "m2": arrays["obs_norm.var"].astype(np.float64) * max(count, 1.0),
    })
    return policy, meta


# ----------------------------------------------------------------------
# Training loop

@dataclass
class TrainResult:
    checkpoint: Path
    metrics_path: Path
    iterations_run: int
    stopped_early_at: int | None
    final_success: dict


def _episode_stats(env: VecEnv, idx: np.ndarray):
    final_d = np.linalg.norm(env.target[idx] - env.pos[idx, :2], axis=1)
    progress = env.initial_dist[idx] - final_d
    return final_d, progress


def _inloop_eval(policy: PolicyNetwork, cfg: TrainConfig, bank: TerrainBank,
                 seed: int) -> dict:
    """Deterministic success probe used for early stopping."""
    from .evaluate import EvalSpec, PolicyAgent, run_trials

    out = {}
    for level, traverse, _rate in cfg.success_stop:
        spec = EvalSpec(terrain_type=cfg.terrain, levels=(level,),
                        traverse_distance=traverse, n_trials=cfg.eval_trials,
                        n_terrains=min(8, cfg.n_terrain_variants),
                        seeds=(seed,))
        succ = run_trials(PolicyAgent(policy), bank, level, spec, seed)
        out[f"level{level}_{traverse:g}m"] = float(np.mean(succ))
    return out


def train(cfg: TrainConfig, out_dir: str | Path,
          initial_policy: PolicyNetwork | None = None) -> TrainResult:
    """Full training run; writes metrics JSONL and checkpoints."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.workers > 0:
        torch.set_num_threads(cfg.workers)
    torch.manual_seed(cfg.seed)

    profile = rewards.load_profile(cfg.profile)
    if cfg.velocity_mode and not profile.velocity_mode:
        profile = rewards.load_profile("velocity_ablation")
    rand = task_randomization(cfg.terrain)
    bank = TerrainBank.build(cfg.terrain, cfg.levels, cfg.n_terrain_variants,
                             seed=cfg.seed * 100003 + 17)
    env = VecEnv(bank, cfg.n_envs, rand, seed=cfg.seed + 1,
                 velocity_mode=profile.velocity_mode)
    cur = curriculum_mod.CurriculumState(cfg.curriculum, cfg.levels,
                                         cfg.n_envs, seed=cfg.seed + 2)
    if not cfg.curriculum.strict and not profile.velocity_mode:
        cur.baselines = curriculum_mod.estimate_baselines(
            cfg.levels, cfg.terrain, cfg.curriculum.baseline_episodes, bank,
            rand, seed=cfg.seed + 3)

    policy = initial_policy or PolicyNetwork(
        OBS_DIM, ACTION_DIM, cfg.hidden, cfg.init_action_std, seed=cfg.seed)
    optimizer = torch.optim.Adam(policy.parameters(), lr=cfg.lr)
    rnd = exploration.RndPair(OBS_DIM, ACTION_DIM, cfg.rnd,
                              seed=cfg.seed + 10)

    metrics_path = out / "metrics.jsonl"
    ckpt_path = out / "policy.ckpt"
    meta_base = {"stage": cfg.stage, "seed": cfg.seed,
                 "config_hash": cfg.config_hash(),
                 "terrain": cfg.terrain.value, "profile": profile.task}

    env.reset_all(cur.levels)
    obs = env.build_observation()
    T, N = cfg.steps_per_iter, cfg.n_envs
    stopped_at = None
    final_success: dict = {}

    with open(metrics_path, "w") as metrics_file:
        for iteration in range(cfg.total_iterations):
            roll_obs = np.empty((T, N, OBS_DIM), dtype=np.float32)
            roll_act = np.empty((T, N, ACTION_DIM), dtype=np.float32)
            roll_mu = np.empty((T, N, ACTION_DIM), dtype=np.float32)
            roll_logp = np.empty((T, N), dtype=np.float64)
            roll_val = np.empty((T, N))
            roll_rew = np.empty((T, N))
            roll_term = np.zeros((T, N), dtype=bool)
            roll_trunc = np.zeros((T, N), dtype=bool)
            roll_boot = np.zeros((T, N))
            term_sums: dict[str, float] = {}
            ep_done = 0
            ep_success = 0

            for t in range(T):
                action, logp, value, mu = policy.act(obs)
                state, events = env.step(action)
                breakdown = rewards.evaluate(state, profile, iteration)
                roll_obs[t] = obs
                roll_act[t] = action
                roll_mu[t] = mu
                roll_logp[t] = logp
                roll_val[t] = value
                roll_rew[t] = breakdown.total
                roll_term[t] = events.terminated
                roll_trunc[t] = events.timeout
                for name, val in breakdown.terms.items():
                    term_sums[name] = term_sums.get(name, 0.0) + float(val.sum())

                done = events.done
                if done.any():
                    next_obs = env.build_observation()
                    to = events.timeout
                    if to.any():
                        roll_boot[t, to] = policy.value(next_obs[to])
                    idx = np.nonzero(done)[0]
                    final_d, progress = _episode_stats(env, idx)
                    new_levels = np.empty(idx.size, dtype=np.int64)
                    for k, e in enumerate(idx):
                        if profile.velocity_mode:
                            c0 = np.cos(env.spawn_yaw[e])
                            s0 = np.sin(env.spawn_yaw[e])
                            disp = (c0 * (env.pos[e, 0] - env.spawn[e, 0])
                                    + s0 * (env.pos[e, 1] - env.spawn[e, 1]))
                            cmd = float(env.vel_cmd[e, 0] * env.T[e])
                            new_levels[k] = cur.on_episode_end_velocity(
                                e, float(disp), cmd)
                            ep_success += int(disp >= 0.5 * cmd)
                        else:
                            outcome = curriculum_mod.EpisodeOutcome(
                                final_distance=float(final_d[k]),
                                progress=float(progress[k]),
                                terminated=bool(events.terminated[e]))
                            new_levels[k] = cur.on_episode_end(e, outcome)
                            ep_success += int(
                                final_d[k] < cfg.curriculum.promote_radius)
                        ep_done += 1
                    env.reset_envs(idx, new_levels)
                    obs = env.build_observation()
                else:
                    obs = env.build_observation()

            flat_obs = roll_obs.reshape(T * N, OBS_DIM)
            flat_act = roll_act.reshape(T * N, ACTION_DIM)
            curio_mean = 0.0
            rnd_loss = 0.0
            if cfg.rnd.enabled:
                rnd.update_normalizer(flat_obs, flat_act)
                curio = rnd.curiosity_reward(flat_obs, flat_act)
                roll_rew += curio.reshape(T, N)
                curio_mean = float(curio.mean())
                rnd_loss = rnd.rnd_update(flat_obs, flat_act)

            # Bootstrap the rollout edge like a timeout.
            edge = ~(roll_term[T - 1] | roll_trunc[T - 1])
            if edge.any():
                roll_trunc[T - 1] |= edge
                roll_boot[T - 1, edge] = policy.value(obs[edge])

            adv, ret = compute_gae(roll_rew, roll_val, roll_term, roll_trunc,
                                   roll_boot, cfg.discount, cfg.gae_lambda)
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)

            batch_np = {
                "obs": flat_obs,
                "actions": flat_act,
                "old_mu": roll_mu.reshape(T * N, ACTION_DIM),
                "log_probs": roll_logp.reshape(T * N),
                "advantages": adv.reshape(T * N),
                "returns": ret.reshape(T * N),
            }
            n_identity = T * N
            if cfg.symmetry_enabled:
                batch_np = exploration.augment(batch_np)

            batch = {
                "obs": torch.from_numpy(
                    policy.normalizer.normalize(batch_np["obs"])),
                "actions": torch.from_numpy(
                    batch_np["actions"].astype(np.float32)),
                "old_mu": torch.from_numpy(
                    batch_np["old_mu"].astype(np.float32)),
                "log_probs": torch.from_numpy(
                    batch_np["log_probs"].astype(np.float32)),
                "advantages": torch.from_numpy(
                    batch_np["advantages"].astype(np.float32)),
                "returns": torch.from_numpy(
                    batch_np["returns"].astype(np.float32)),
                "old_sigma": policy.log_std.exp().detach().clone(),
            }
            stats = ppo_update(policy, optimizer, batch, cfg, n_identity)
            policy.normalizer.update(batch_np["obs"])

            line = {
                "iteration": iteration,
                "reward_mean": float(roll_rew.mean()),
                "terms": {k: v / (T * N) for k, v in sorted(term_sums.items())},
                "curiosity_mean": curio_mean,
                "rnd_loss": rnd_loss,
                "level_histogram": cur.histogram(),
                "episodes": ep_done,
                "success_rate": (ep_success / ep_done) if ep_done else None,
                "kl": stats.kl,
                "policy_loss": stats.policy_loss,
                "value_loss": stats.value_loss,
                "entropy": stats.entropy,
                "clip_fraction": stats.clip_fraction,
                "lr": stats.lr,
                "action_std": [round(float(v), 6) for v in
                               policy.log_std.exp().detach().numpy()],
            }

            if (cfg.eval_every and cfg.success_stop
                    and (iteration + 1) % cfg.eval_every == 0):
                final_success = _inloop_eval(policy, cfg, bank,
                                             seed=cfg.seed + 5)
                line["eval"] = final_success
                if all(final_success[f"level{lv}_{tr:g}m"] >= rate
                       for lv, tr, rate in cfg.success_stop):
                    stopped_at = iteration + 1

            metrics_file.write(json.dumps(line, sort_keys=True) + "\n")
            metrics_file.flush()

            if ((iteration + 1) % cfg.checkpoint_every == 0
                    or iteration + 1 == cfg.total_iterations or stopped_at):
                save_checkpoint(ckpt_path, policy,
                                meta_base | {"iteration": iteration + 1})
            if stopped_at:
                break

    if not ckpt_path.exists():
        save_checkpoint(ckpt_path, policy, meta_base | {"iteration": 0})
    return TrainResult(checkpoint=ckpt_path, metrics_path=metrics_path,
                       iterations_run=(stopped_at or cfg.total_iterations),
                       stopped_early_at=stopped_at,
                       final_success=final_success)


def finetune(checkpoint_path: str | Path, cfg: TrainConfig,
             out_dir: str | Path) -> TrainResult:
    """Continue a generalist checkpoint on a new terrain/profile.

    Actor and critic come from the checkpoint; optimizer, curiosity and
    curriculum state start fresh.
    """
    policy, meta = load_checkpoint(checkpoint_path,
                                   expect_config_hash=cfg.config_hash())
    if policy.obs_dim != OBS_DIM:
        raise CheckpointError(
            f"actor input dimension {policy.obs_dim} != environment "
            f"observation dimension {OBS_DIM}")
    if policy.act_dim != ACTION_DIM:
        raise CheckpointError(
            f"actor output dimension {policy.act_dim} != environment "
            f"action dimension {ACTION_DIM}")
    cfg.stage = "finetune"
    return train(cfg, out_dir, initial_policy=policy)
