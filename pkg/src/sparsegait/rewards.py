"""Navigation-task reward terms.

The task reward is gated by a terminal time window: tracking terms pay
out only during the last seconds of an episode, leaving the policy free
to choose how it reaches the target.  All remaining terms regularize
motion or guide exploration.  The total reward is the plain sum of all
terms; per-task profiles change only weights and mask parameters.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml


def wrap_angle(x):
    """Wrap angles to (-pi, pi]."""
    w = np.mod(np.asarray(x, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def mask_duration(t, T, t0):
    """Terminal-window gate: (1/t0) * 1(t > T - t0)."""
    if np.any(np.asarray(t0) <= 0):
        raise ValueError("duration mask window must be positive")
    return (np.asarray(t) > np.asarray(T) - t0) / t0


def mask_position(p, p_star, d0):
    """1(||p - p*|| < d0)."""
    d = np.linalg.norm(np.asarray(p) - np.asarray(p_star), axis=-1)
    return (d < d0).astype(np.float64)


def mask_heading(psi, psi_star, theta0):
    """1(|wrap(psi - psi*)| < theta0)."""
    return (np.abs(wrap_angle(np.asarray(psi) - np.asarray(psi_star)))
            < theta0).astype(np.float64)


def task_reward(chi, chi_star, t, T, T_r, c_task):
    """Terminal-window tracking reward (c/T_r) / (1 + ||chi - chi*||^2)."""
    diff = np.asarray(chi, dtype=np.float64) - np.asarray(chi_star, dtype=np.float64)
    if diff.ndim == 0:
        sq = diff * diff
    else:
        sq = np.sum(diff * diff, axis=-1)
    gate = mask_duration(t, T, T_r)
    return c_task * gate / (1.0 + sq)


@dataclass(frozen=True)
class MaskParams:
    window: float = 1.0
    position_radius: float = 0.25
    heading_radius: float = 0.5

    def __post_init__(self):
        if min(self.window, self.position_radius, self.heading_radius) <= 0:
            raise ValueError("mask parameters must be positive")


@dataclass(frozen=True)
class RewardProfile:
    """Weights and mask parameters for every reward term."""

    task: str = "generalist"
    position_weight: float = 10.0
    position_window: float = 2.0
    heading_weight: float = 5.0
    heading_window: float = 4.0
    heading_position_radius: float = 2.0
    termination_weight: float = -200.0
    collision_weight: float = -1.0
    joint_velocity_weight: float = -0.001
    joint_velocity_limit_weight: float = -1.0
    joint_velocity_limit_fraction: float = 0.9
    base_accel_weight: float = -0.001
    base_accel_angular_scale: float = 0.02
    feet_accel_weight: float = -0.0005
    action_rate_weight: float = -0.01
    torque_weight: float = -1e-5
    torque_limit_weight: float = -0.2
    torque_limit_fraction: float = 1.0
    contact_force_weight: float = -2.5e-5
    contact_force_threshold: float = 700.0
    dont_wait_weight: float = -1.0
    dont_wait_speed: float = 0.2
    dont_wait_radius: float = 1.0
    move_in_direction_weight: float = 1.0
    move_in_direction_iters: int = 150
    stand_still_weight: float = -1.0
    stand_still_masks: MaskParams = field(default_factory=MaskParams)
    stand_still_linear_scale: float = 2.5
    stand_still_angular_scale: float = 1.0
    aggressive_weight: float = 0.0
    aggressive_speed: float = 1.0
    stand_pose_weight: float = 0.0
    stand_pose_height: float = 0.6
    # Velocity-tracking ablation replaces the two tracking terms.
    velocity_mode: bool = False
    velocity_linear_weight: float = 1.0
    velocity_angular_weight: float = 0.5
    velocity_sigma_sq: float = 0.25


_PROFILE_OVERRIDES = {
    "generalist": {},
    "s2": dict(task="s2", position_weight=25.0, position_window=4.0,
               heading_weight=12.0, heading_window=4.0,
               heading_position_radius=2.5, aggressive_weight=-5.0,
               stand_pose_weight=-5.0),
    "bb": dict(task="bb", position_weight=25.0, position_window=4.0,
               heading_weight=12.0, heading_window=4.0,
               heading_position_radius=2.5, aggressive_weight=-5.0,
               stand_pose_weight=-5.0, torque_weight=-2e-5,
               torque_limit_weight=-0.5, torque_limit_fraction=0.8),
    "stepping_beams": dict(task="stepping_beams"),
    "velocity_ablation": dict(task="velocity_ablation", velocity_mode=True),
}


def named_profile(name: str) -> RewardProfile:
    if name not in _PROFILE_OVERRIDES:
        raise ValueError(f"unknown reward profile {name!r}; "
                         f"expected one of {sorted(_PROFILE_OVERRIDES)}")
    return RewardProfile(**({"task": name} | _PROFILE_OVERRIDES[name]))


def load_profile(name_or_path: str) -> RewardProfile:
    """Load a shipped profile by name, or any profile from a YAML file."""
    path = Path(name_or_path)
    if path.suffix in (".yaml", ".yml") and path.exists():
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        return _profile_from_dict(data)
    ref = resources.files("sparsegait.profiles").joinpath(f"{name_or_path}.yaml")
    if ref.is_file():
        data = yaml.safe_load(ref.read_text()) or {}
        return _profile_from_dict(data)
    return named_profile(name_or_path)


def _profile_from_dict(data: dict) -> RewardProfile:
    """Translate the one-key-per-term file layout into a profile."""
    kw = {"task": data.get("task", "custom")}

    def grab(section, mapping):
        for src, dst in mapping.items():
            if section in data and src in data[section]:
                kw[dst] = data[section][src]

    grab("position_tracking", {"weight": "position_weight",
                               "window": "position_window"})
    grab("heading_tracking", {"weight": "heading_weight",
                              "window": "heading_window",
                              "position_radius": "heading_position_radius"})
    grab("termination", {"weight": "termination_weight"})
    grab("collision", {"weight": "collision_weight"})
    grab("joint_velocity", {"weight": "joint_velocity_weight"})
    grab("joint_velocity_limit", {"weight": "joint_velocity_limit_weight",
                                  "limit_fraction": "joint_velocity_limit_fraction"})
    grab("base_accel", {"weight": "base_accel_weight",
                        "angular_scale": "base_accel_angular_scale"})
    grab("feet_accel", {"weight": "feet_accel_weight"})
    grab("action_rate", {"weight": "action_rate_weight"})
    grab("torque", {"weight": "torque_weight"})
    grab("torque_limit", {"weight": "torque_limit_weight",
                          "limit_fraction": "torque_limit_fraction"})
    grab("contact_force", {"weight": "contact_force_weight",
                           "threshold": "contact_force_threshold"})
    grab("dont_wait", {"weight": "dont_wait_weight", "speed": "dont_wait_speed",
                       "position_radius": "dont_wait_radius"})
    grab("move_in_direction", {"weight": "move_in_direction_weight",
                               "iterations": "move_in_direction_iters"})
    if "stand_still" in data:
        ss = data["stand_still"]
        kw["stand_still_weight"] = ss.get("weight", -1.0)
        kw["stand_still_masks"] = MaskParams(
            window=ss.get("window", 1.0),
            position_radius=ss.get("position_radius", 0.25),
            heading_radius=ss.get("heading_radius", 0.5))
        kw["stand_still_linear_scale"] = ss.get("linear_scale", 2.5)
        kw["stand_still_angular_scale"] = ss.get("angular_scale", 1.0)
    grab("aggressive_motion", {"weight": "aggressive_weight",
                               "speed": "aggressive_speed"})
    grab("stand_pose", {"weight": "stand_pose_weight",
                        "height": "stand_pose_height"})
    if "velocity_tracking" in data:
        vt = data["velocity_tracking"]
        kw["velocity_mode"] = vt.get("enabled", True)
        kw["velocity_linear_weight"] = vt.get("linear_weight", 1.0)
        kw["velocity_angular_weight"] = vt.get("angular_weight", 0.5)
        kw["velocity_sigma_sq"] = vt.get("sigma_sq", 0.25)
    return RewardProfile(**kw)


@dataclass
class StepState:
    """Per-step quantities the reward terms read, batched over envs.

    Accelerations are finite differences over the control step supplied
    by the simulator (zero on the first step of an episode).  ``action``
    holds target foot offsets in meters.
    """

    pos: np.ndarray            # (N, 2) base xy, world
    z: np.ndarray              # (N,)
    yaw: np.ndarray            # (N,)
    vel: np.ndarray            # (N, 3) world linear velocity
    ang: np.ndarray            # (N, 3) roll/pitch/yaw rates
    base_acc: np.ndarray       # (N, 3)
    ang_acc: np.ndarray        # (N, 3)
    feet_acc: np.ndarray       # (N, 4, 3)
    qdot: np.ndarray           # (N, 12)
    action: np.ndarray         # (N, 12) target offsets, meters
    prev_action: np.ndarray    # (N, 12)
    torques: np.ndarray        # (N, 12)
    contact_force_norms: np.ndarray  # (N, 4)
    collisions: np.ndarray     # (N,) body/leg collision count
    terminated: np.ndarray     # (N,) failure termination this step
    gravity: np.ndarray        # (N, 3) projected gravity, unit
    target: np.ndarray         # (N, 2)
    target_yaw: np.ndarray     # (N,)
    t: np.ndarray              # (N,) episode time after the step
    T: np.ndarray              # (N,) episode length
    qdot_limit: float = 2.0
    torque_limit: float = 300.0
    command_velocity: np.ndarray | None = None   # (N, 2) yaw-frame, ablation
    command_yaw_rate: np.ndarray | None = None   # (N,), ablation


@dataclass
class RewardBreakdown:
    terms: dict[str, np.ndarray]
    total: np.ndarray

    @classmethod
    def from_terms(cls, terms: dict[str, np.ndarray]) -> "RewardBreakdown":
        total = np.zeros_like(next(iter(terms.values())))
        for v in terms.values():
            total = total + v
        return cls(terms=terms, total=total)


def _regularization_terms(s: StepState, p: RewardProfile) -> dict[str, np.ndarray]:
    terms = {}
    terms["termination"] = p.termination_weight * s.terminated.astype(np.float64)
    terms["collision"] = p.collision_weight * s.collisions.astype(np.float64)
    terms["joint_velocity"] = p.joint_velocity_weight * np.sum(s.qdot ** 2, axis=-1)
    over = np.maximum(
        np.abs(s.qdot) - p.joint_velocity_limit_fraction * s.qdot_limit, 0.0)
    terms["joint_velocity_limit"] = p.joint_velocity_limit_weight * over.sum(axis=-1)
    terms["base_accel"] = p.base_accel_weight * (
        np.sum(s.base_acc ** 2, axis=-1)
        + p.base_accel_angular_scale * np.sum(s.ang_acc ** 2, axis=-1))
    terms["feet_accel"] = p.feet_accel_weight * np.linalg.norm(
        s.feet_acc, axis=-1).sum(axis=-1)
    terms["action_rate"] = p.action_rate_weight * np.sum(
        (s.action - s.prev_action) ** 2, axis=-1)
    terms["torque"] = p.torque_weight * np.sum(s.torques ** 2, axis=-1)
    tau_lim = p.torque_limit_fraction * s.torque_limit
    terms["torque_limit"] = p.torque_limit_weight * np.maximum(
        np.abs(s.torques) - tau_lim, 0.0).sum(axis=-1)
    clipped = np.clip(s.contact_force_norms - p.contact_force_threshold,
                      0.0, p.contact_force_threshold)
    terms["contact_force"] = p.contact_force_weight * np.sum(clipped ** 2, axis=-1)
    return terms


def _exploration_and_posture_terms(s: StepState, p: RewardProfile,
                                   train_iteration: int) -> dict[str, np.ndarray]:
    terms = {}
    speed = np.linalg.norm(s.vel, axis=-1)
    near = mask_position(s.pos, s.target, p.dont_wait_radius)
    terms["dont_wait"] = (p.dont_wait_weight * (1.0 - near)
                          * (speed < p.dont_wait_speed))

    to_target = s.target - s.pos
    v_xy = s.vel[:, :2]
    denom = np.linalg.norm(v_xy, axis=-1) * np.linalg.norm(to_target, axis=-1)
    cos = np.divide(np.sum(v_xy * to_target, axis=-1), denom,
                    out=np.zeros_like(denom), where=denom > 1e-9)
    gate = 1.0 if train_iteration < p.move_in_direction_iters else 0.0
    terms["move_in_direction"] = p.move_in_direction_weight * gate * cos

    ss = p.stand_still_masks
    still_mask = (mask_position(s.pos, s.target, ss.position_radius)
                  * mask_heading(s.yaw, s.target_yaw, ss.heading_radius)
                  * mask_duration(s.t, s.T, ss.window))
    ang_speed = np.linalg.norm(s.ang, axis=-1)
    terms["stand_still"] = p.stand_still_weight * still_mask * (
        p.stand_still_linear_scale * speed
        + p.stand_still_angular_scale * ang_speed)

    h_speed = np.linalg.norm(v_xy, axis=-1)
    excess = h_speed - p.aggressive_speed
    terms["aggressive_motion"] = (p.aggressive_weight * excess ** 2
                                  * (excess > 0.0))

    terms["stand_pose"] = p.stand_pose_weight * still_mask * (
        np.abs(s.z - p.stand_pose_height)
        + s.gravity[:, 0] ** 2 + s.gravity[:, 1] ** 2)
    return terms


def compute_rewards(s: StepState, profile: RewardProfile,
                    train_iteration: int = 0) -> RewardBreakdown:
    """Evaluate every reward term for a batch of transitions."""
    terms: dict[str, np.ndarray] = {}
    terms["position_tracking"] = task_reward(
        s.pos, s.target, s.t, s.T, profile.position_window, profile.position_weight)
    heading_err = wrap_angle(s.yaw - s.target_yaw)
    terms["heading_tracking"] = (
        task_reward(heading_err, 0.0, s.t, s.T, profile.heading_window,
                    profile.heading_weight)
        * mask_position(s.pos, s.target, profile.heading_position_radius))
    terms.update(_regularization_terms(s, profile))
    terms.update(_exploration_and_posture_terms(s, profile, train_iteration))
    return RewardBreakdown.from_terms(terms)


def velocity_tracking_rewards(s: StepState, profile: RewardProfile,
                              train_iteration: int = 0) -> RewardBreakdown:
    """Ablation mode: exponential velocity tracking replaces the
    position/heading terms; every other term is shared."""
    if s.command_velocity is None or s.command_yaw_rate is None:
        raise ValueError("velocity tracking requires velocity commands")
    c, si = np.cos(s.yaw), np.sin(s.yaw)
    v_fwd = c * s.vel[:, 0] + si * s.vel[:, 1]
    v_lat = -si * s.vel[:, 0] + c * s.vel[:, 1]
    v_body = np.stack([v_fwd, v_lat], axis=-1)
    err_sq = np.sum((v_body - s.command_velocity) ** 2, axis=-1)
    terms = {
        "velocity_tracking": profile.velocity_linear_weight
        * np.exp(-err_sq / profile.velocity_sigma_sq),
        "yaw_rate_tracking": profile.velocity_angular_weight
        * np.exp(-(s.ang[:, 2] - s.command_yaw_rate) ** 2
                 / profile.velocity_sigma_sq),
    }
    terms.update(_regularization_terms(s, profile))
    # Exploration shaping that references the position target is not
    # meaningful under velocity commands; zero-fill to keep term names.
    zeros = np.zeros_like(s.t, dtype=np.float64)
    for name in ("dont_wait", "move_in_direction", "stand_still",
                 "aggressive_motion", "stand_pose"):
        terms[name] = zeros.copy()
    ex = _exploration_and_posture_terms(s, profile, train_iteration)
    terms["aggressive_motion"] = ex["aggressive_motion"]
    return RewardBreakdown.from_terms(terms)


def evaluate(s: StepState, profile: RewardProfile,
             train_iteration: int = 0) -> RewardBreakdown:
    """Dispatch on the profile's mode."""
    if profile.velocity_mode:
        return velocity_tracking_rewards(s, profile, train_iteration)
    return compute_rewards(s, profile, train_iteration)
