"""Batched simplified point-foot quadruped simulation.

The robot is a rigid 50 kg base with four massless point feet.  Each
leg is a Cartesian PD actuator acting on its foot's offset from a
nominal stance point in the yaw-aligned base frame.  Swing feet move
under the actuator force alone (no base reaction: dropping leg mass
keeps flight ballistic); feet in contact are pinned to steppable
terrain and transmit the actuator reaction to the base, limited by a
unilateral normal force and a friction cone.  Roll and pitch follow a
damped rigid-body model driven by contact-force moments, a posture
spring (standing in for the leg torques a full model would provide),
and the center-of-mass bias torque.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .configs import RandomizationConfig
from .rewards import StepState, wrap_angle
from .terrain import (CELL_SIZE, FALL_HEIGHT, SCAN_DIM, SCAN_SHAPE,
                      TerrainBank, TerrainType, _SCAN_GRID)


@dataclass(frozen=True)
class SimParams:
    mass: float = 50.0
    gravity: float = 9.81
    foot_mass: float = 2.0          # integration mass for swing feet
    kp: float = 7000.0
    kd: float = 150.0
    tau_limit: float = 300.0        # per actuator coordinate, N
    # Foot forces map to joint-torque scale through a nominal lever arm;
    # effort-based reward terms read forces in these units.
    torque_lever_arm: float = 0.35
    friction: float = 0.7
    qdot_limit: float = 2.0
    stand_height: float = 0.6
    inertia: tuple[float, float, float] = (1.5, 3.5, 3.5)
    posture_kp: float = 1200.0
    posture_kd: float = 100.0
    dt: float = 0.02
    substeps: int = 4
    workspace_xy: float = 0.25
    workspace_z: tuple[float, float] = (-0.75, -0.2)  # foot z below base
    action_scale_xy: float = 0.25
    # Symmetric vertical scale keeps zero-mean action noise height-neutral
    # inside the asymmetric workspace box (raising a foot is still
    # reachable through a larger action mean).
    action_scale_z: float = 0.15
    touchdown_depth: float = 0.04
    fall_margin: float = 0.3
    tilt_limit: float = 1.0
    spawn_xy_noise: float = 0.3
    spawn_y_noise: float = 0.5
    spawn_yaw_noise: float = 0.3
    target_lateral_max: float = 1.0


DEFAULT_SIM = SimParams()

# Leg order: front-left, front-right, hind-left, hind-right.
NOMINAL_OFFSETS = np.array([
    [0.3, 0.2, -0.6],
    [0.3, -0.2, -0.6],
    [-0.3, 0.2, -0.6],
    [-0.3, -0.2, -0.6],
])

N_LEGS = 4
ACTION_DIM = 12

# Observation layout (start, stop) slices into the flat vector.
OBS_SLICES = {
    "lin_vel": (0, 3),
    "ang_vel": (3, 6),
    "gravity": (6, 9),
    "q": (9, 21),
    "qdot": (21, 33),
    "prev_action": (33, 45),
    "scan": (45, 45 + SCAN_DIM),
    "rel_target": (45 + SCAN_DIM, 47 + SCAN_DIM),
    "heading_err": (47 + SCAN_DIM, 49 + SCAN_DIM),
    "time_to_go": (49 + SCAN_DIM, 50 + SCAN_DIM),
}
OBS_DIM = 50 + SCAN_DIM


def projected_gravity(roll, pitch):
    """Unit gravity direction in the base frame, from roll/pitch."""
    roll = np.asarray(roll, dtype=np.float64)
    pitch = np.asarray(pitch, dtype=np.float64)
    return np.stack([
        np.sin(pitch),
        -np.sin(roll) * np.cos(pitch),
        -np.cos(roll) * np.cos(pitch),
    ], axis=-1)


def scale_action(action, params: SimParams = DEFAULT_SIM):
    """Normalized policy action -> target foot offsets in meters."""
    a = np.asarray(action, dtype=np.float64).reshape(-1, N_LEGS, 3)
    targets = np.empty_like(a)
    targets[..., 0] = np.clip(a[..., 0] * params.action_scale_xy,
                              -params.workspace_xy, params.workspace_xy)
    targets[..., 1] = np.clip(a[..., 1] * params.action_scale_xy,
                              -params.workspace_xy, params.workspace_xy)
    z_lo = params.workspace_z[0] + params.stand_height
    z_hi = params.workspace_z[1] + params.stand_height
    targets[..., 2] = np.clip(a[..., 2] * params.action_scale_z, z_lo, z_hi)
    return targets.reshape(a.shape[0], ACTION_DIM)


@dataclass
class StepEvents:
    """Episode transitions produced by one control step."""

    terminated: np.ndarray      # failure termination
    timeout: np.ndarray         # ran out of episode time, upright
    fell: np.ndarray
    tilted: np.ndarray
    base_collision: np.ndarray
    out_of_bounds: np.ndarray
    fault: np.ndarray

    @property
    def done(self):
        return self.terminated | self.timeout


class VecEnv:
    """N independent environments stepped in lockstep.

    Stepping is element-wise over the batch: results match stepping any
    environment alone, so the batch may be sharded across workers as
    long as per-environment RNG streams stay with their environment.
    """

    def __init__(self, bank: TerrainBank, n_envs: int,
                 randomization: RandomizationConfig, seed: int = 0,
                 params: SimParams = DEFAULT_SIM,
                 uniform_target_heading: bool | None = None,
                 velocity_mode: bool = False):
        self.bank = bank
        self.n = n_envs
        self.rand = randomization
        self.params = params
        self.velocity_mode = velocity_mode
        if uniform_target_heading is None:
            uniform_target_heading = (
                bank.terrain_type == TerrainType.STONES_EVERYWHERE)
        self.uniform_target_heading = uniform_target_heading
        seq = np.random.SeedSequence(seed)
        self.rngs = [np.random.Generator(np.random.PCG64(s))
                     for s in seq.spawn(n_envs)]

        n = n_envs
        self.pos = np.zeros((n, 3))
        self.yaw = np.zeros(n)
        self.rp = np.zeros((n, 2))
        self.vel = np.zeros((n, 3))
        self.rates = np.zeros((n, 3))
        self.feet = np.zeros((n, N_LEGS, 3))
        self.feet_vel = np.zeros((n, N_LEGS, 3))
        self.contact = np.zeros((n, N_LEGS), dtype=bool)
        self.prev_action = np.zeros((n, ACTION_DIM))
        self.prev_targets = np.zeros((n, ACTION_DIM))
        self.torques = np.zeros((n, ACTION_DIM))
        self.contact_forces = np.zeros((n, N_LEGS))
        self.steps = np.zeros(n, dtype=np.int64)
        self.max_steps = np.ones(n, dtype=np.int64)
        self.T = np.ones(n)
        self.target = np.zeros((n, 2))
        self.target_yaw = np.zeros(n)
        self.drift = np.zeros((n, 2))
        self.com_bias = np.zeros((n, 3))
        self.level = np.zeros(n, dtype=np.int64)
        self.grid_idx = np.zeros(n, dtype=np.int64)
        self.spawn = np.zeros((n, 2))
        self.spawn_yaw = np.zeros(n)
        self.initial_dist = np.zeros(n)
        self.max_forward = np.zeros(n)
        self.fault = np.zeros(n, dtype=bool)
        self.vel_cmd = np.zeros((n, 2))    # body-frame, velocity mode
        self.yaw_cmd = np.zeros(n)
        self._prev_vel = np.zeros((n, 3))
        self._prev_rates = np.zeros((n, 3))
        self._prev_feet_vel = np.zeros((n, N_LEGS, 3))

    # ------------------------------------------------------------------
    # episode setup

    def reset_envs(self, idx, levels, command=None):
        """Reset selected environments at the given difficulty levels.

        ``command`` optionally pins the episode command for evaluation:
        a dict with any of target_distance / target_lateral /
        target_heading / episode_length / variant.
        """
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        levels = np.broadcast_to(np.asarray(levels, dtype=np.int64), idx.shape)
        command = command or {}
        p = self.params
        for k, env in enumerate(idx):
            rng = self.rngs[env]
            lvl = levels[k]
            variant = int(rng.integers(self.bank.n_variants))
            variant = int(command.get("variant", variant))
            T = rng.uniform(*self.rand.episode_length_range)
            T = float(command.get("episode_length", T))
            dist = rng.uniform(*self.rand.target_distance_range)
            dist = float(command.get("target_distance", dist))
            lat_max = min(p.target_lateral_max, 0.5 * dist)
            lat = rng.uniform(-lat_max, lat_max)
            lat = float(command.get("target_lateral", lat))
            if self.uniform_target_heading:
                t_yaw = rng.uniform(-np.pi, np.pi)
            else:
                t_yaw = 0.0
            t_yaw = float(command.get("target_heading", t_yaw))
            sp_x = self.bank.spawn_x + rng.uniform(-p.spawn_xy_noise,
                                                   p.spawn_xy_noise)
            sp_y = rng.uniform(-p.spawn_y_noise, p.spawn_y_noise)
            yaw = rng.uniform(-p.spawn_yaw_noise, p.spawn_yaw_noise)
            if "spawn_yaw" in command:
                yaw = float(command["spawn_yaw"])
            drift = rng.uniform(*self.rand.scan_drift_range, size=2)
            bias = np.array([
                rng.uniform(*self.rand.com_bias_x),
                rng.uniform(*self.rand.com_bias_y),
                rng.uniform(*self.rand.com_bias_z),
            ])

            self.level[env] = lvl
            self.grid_idx[env] = self.bank.grid_index(lvl, variant)
            self.T[env] = T
            self.max_steps[env] = max(int(round(T / p.dt)), 1)
            self.steps[env] = 0
            self.spawn[env] = (sp_x, sp_y)
            self.pos[env] = (sp_x, sp_y, p.stand_height)
            self.yaw[env] = yaw
            self.rp[env] = 0.0
            self.vel[env] = 0.0
            self.rates[env] = 0.0
            c, s = np.cos(yaw), np.sin(yaw)
            feet_xy = np.stack([
                sp_x + c * NOMINAL_OFFSETS[:, 0] - s * NOMINAL_OFFSETS[:, 1],
                sp_y + s * NOMINAL_OFFSETS[:, 0] + c * NOMINAL_OFFSETS[:, 1],
            ], axis=-1)
            self.feet[env, :, :2] = feet_xy
            self.feet[env, :, 2] = 0.0
            self.feet_vel[env] = 0.0
            self.contact[env] = True
            self.prev_action[env] = 0.0
            self.prev_targets[env] = scale_action(
                np.zeros((1, ACTION_DIM)), p)[0]
            self.torques[env] = 0.0
            self.contact_forces[env] = 0.0
            off = dist * dist - lat * lat
            self.target[env] = (sp_x + np.sqrt(max(off, 0.0)), sp_y + lat)
            self.target_yaw[env] = t_yaw
            self.spawn_yaw[env] = yaw
            self.drift[env] = drift
            self.com_bias[env] = bias
            if self.velocity_mode:
                v_cmd = rng.uniform(0.2, 1.0)
                v_cmd = float(command.get("velocity", v_cmd))
                self.vel_cmd[env] = (v_cmd, 0.0)
                self.yaw_cmd[env] = 0.0
            self.initial_dist[env] = np.linalg.norm(self.target[env]
                                                    - self.spawn[env])
            self.max_forward[env] = 0.0
            self.fault[env] = False
            self._prev_vel[env] = 0.0
            self._prev_rates[env] = 0.0
            self._prev_feet_vel[env] = 0.0

    def reset_all(self, levels, command=None):
        self.reset_envs(np.arange(self.n), levels, command)

    # ------------------------------------------------------------------
    # dynamics

    def _leg_frame(self):
        """Yaw-frame foot offsets q and their rates qdot, (N, 4, 3)."""
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        rel = self.feet - self.pos[:, None, :]
        bx = c[:, None] * rel[..., 0] + s[:, None] * rel[..., 1]
        by = -s[:, None] * rel[..., 0] + c[:, None] * rel[..., 1]
        bz = rel[..., 2]
        vrel = self.feet_vel - self.vel[:, None, :]
        wz = self.rates[:, 2][:, None]
        qdx = c[:, None] * vrel[..., 0] + s[:, None] * vrel[..., 1] + wz * by
        qdy = -s[:, None] * vrel[..., 0] + c[:, None] * vrel[..., 1] - wz * bx
        qdz = vrel[..., 2]
        b = np.stack([bx, by, bz], axis=-1)
        qd = np.stack([qdx, qdy, qdz], axis=-1)
        return b, qd, c, s

    def _forces(self, targets):
        """Actuator forces, contact forces, and rigid-body accelerations."""
        p = self.params
        b, qd, c, s = self._leg_frame()
        q = b - NOMINAL_OFFSETS[None, :, :]
        tgt = targets.reshape(self.n, N_LEGS, 3)
        u = p.kp * (tgt - q) - p.kd * qd
        u[..., 2] -= self.contact * (p.mass * p.gravity / N_LEGS)
        np.clip(u, -p.tau_limit, p.tau_limit, out=u)

        # Unilateral contact: a leg pulling its foot up releases it.
        f_n = -u[..., 2]
        release = self.contact & (f_n <= 0.0)
        stance = self.contact & ~release
        # Friction cone clips what the actuator can transmit tangentially.
        f_t = np.linalg.norm(u[..., :2], axis=-1)
        cap = p.friction * np.maximum(f_n, 0.0)
        over = stance & (f_t > cap)
        scale = np.where(over, cap / np.maximum(f_t, 1e-12), 1.0)
        u[..., :2] *= scale[..., None]

        f_foot = np.where(stance[..., None], -u, 0.0)   # ground reaction
        fw_x = c[:, None] * f_foot[..., 0] - s[:, None] * f_foot[..., 1]
        fw_y = s[:, None] * f_foot[..., 0] + c[:, None] * f_foot[..., 1]
        lin_acc = np.zeros((self.n, 3))
        lin_acc[:, 0] = fw_x.sum(axis=1) / p.mass
        lin_acc[:, 1] = fw_y.sum(axis=1) / p.mass
        lin_acc[:, 2] = f_foot[..., 2].sum(axis=1) / p.mass - p.gravity

        moment = np.cross(b, f_foot).sum(axis=1)
        any_contact = stance.any(axis=1)
        mg = p.mass * p.gravity
        moment[:, 0] += any_contact * (-mg * self.com_bias[:, 1]
                                       - p.posture_kp * self.rp[:, 0]
                                       - p.posture_kd * self.rates[:, 0])
        moment[:, 1] += any_contact * (mg * self.com_bias[:, 0]
                                       - p.posture_kp * self.rp[:, 1]
                                       - p.posture_kd * self.rates[:, 1])
        ang_acc = moment / np.asarray(p.inertia)

        # Swing feet accelerate under the actuator force alone.
        swing = ~stance
        fa_x = (c[:, None] * u[..., 0] - s[:, None] * u[..., 1]) / p.foot_mass
        fa_y = (s[:, None] * u[..., 0] + c[:, None] * u[..., 1]) / p.foot_mass
        fa_z = u[..., 2] / p.foot_mass
        feet_acc = np.where(swing[..., None],
                            np.stack([fa_x, fa_y, fa_z], axis=-1), 0.0)
        return u, stance, f_foot, lin_acc, ang_acc, feet_acc

    def _substep(self, targets, h):
        p = self.params
        u, stance, f_foot, lin_acc, ang_acc, feet_acc = self._forces(targets)
        self.contact = stance
        # Kick-drift-kick keeps flight phases exactly ballistic.
        self.vel += 0.5 * h * lin_acc
        self.rates += 0.5 * h * ang_acc
        self.feet_vel += 0.5 * h * feet_acc
        self.pos += h * self.vel
        self.yaw += h * self.rates[:, 2]
        self.rp += h * self.rates[:, :2]
        free = ~self.contact[..., None]
        self.feet += h * self.feet_vel * free
        u2, stance2, f_foot2, lin_acc2, ang_acc2, feet_acc2 = \
            self._forces(targets)
        self.contact = stance2
        self.vel += 0.5 * h * lin_acc2
        self.rates += 0.5 * h * ang_acc2
        self.feet_vel += 0.5 * h * feet_acc2
        self.feet_vel *= ~stance2[..., None]

        self._clamp_feet()
        self._touchdown()
        self.torques = u2.reshape(self.n, ACTION_DIM)
        self.contact_forces = (np.linalg.norm(f_foot2, axis=-1)
                               * stance2)

    def _clamp_feet(self):
        """Keep feet inside the leg workspace box; an overstretched
        stance leg releases its contact."""
        p = self.params
        b, qd, c, s = self._leg_frame()
        lo = NOMINAL_OFFSETS + np.array([-p.workspace_xy, -p.workspace_xy, 0.0])
        hi = NOMINAL_OFFSETS + np.array([p.workspace_xy, p.workspace_xy, 0.0])
        lo = lo.copy()
        hi = hi.copy()
        lo[:, 2] = p.workspace_z[0]
        hi[:, 2] = p.workspace_z[1]
        bc = np.clip(b, lo[None], hi[None])
        moved = np.any(bc != b, axis=-1)
        if not moved.any():
            # Still clamp relative foot speed for swing legs.
            self._apply_qdot_limit(b, qd, c, s)
            return
        self.contact &= ~moved
        fx = c[:, None] * bc[..., 0] - s[:, None] * bc[..., 1]
        fy = s[:, None] * bc[..., 0] + c[:, None] * bc[..., 1]
        self.feet[..., 0] = np.where(moved, self.pos[:, 0][:, None] + fx,
                                     self.feet[..., 0])
        self.feet[..., 1] = np.where(moved, self.pos[:, 1][:, None] + fy,
                                     self.feet[..., 1])
        self.feet[..., 2] = np.where(moved, self.pos[:, 2][:, None] + bc[..., 2],
                                     self.feet[..., 2])
        self.feet_vel = np.where(moved[..., None], self.vel[:, None, :],
                                 self.feet_vel)
        b2, qd2, c, s = self._leg_frame()
        self._apply_qdot_limit(b2, qd2, c, s)

    def _apply_qdot_limit(self, b, qd, c, s):
        p = self.params
        qdc = np.clip(qd, -p.qdot_limit, p.qdot_limit)
        # Reconstruct world velocity only for feet that actually clipped,
        # so untouched feet keep bit-identical state.
        clipped = np.any(qdc != qd, axis=-1) & ~self.contact
        if not clipped.any():
            return
        wz = self.rates[:, 2][:, None]
        rel_x = c[:, None] * (qdc[..., 0] - wz * b[..., 1]) \
            - s[:, None] * (qdc[..., 1] + wz * b[..., 0])
        rel_y = s[:, None] * (qdc[..., 0] - wz * b[..., 1]) \
            + c[:, None] * (qdc[..., 1] + wz * b[..., 0])
        self.feet_vel[..., 0] = np.where(clipped,
                                         self.vel[:, 0][:, None] + rel_x,
                                         self.feet_vel[..., 0])
        self.feet_vel[..., 1] = np.where(clipped,
                                         self.vel[:, 1][:, None] + rel_y,
                                         self.feet_vel[..., 1])
        self.feet_vel[..., 2] = np.where(clipped,
                                         self.vel[:, 2][:, None] + qdc[..., 2],
                                         self.feet_vel[..., 2])

    def _touchdown(self):
        p = self.params
        gi = np.repeat(self.grid_idx, N_LEGS)
        h_s, steppable, _ = self.bank.lookup(
            gi, self.feet[..., 0].ravel(), self.feet[..., 1].ravel())
        h_s = h_s.reshape(self.n, N_LEGS)
        steppable = steppable.reshape(self.n, N_LEGS)
        z = self.feet[..., 2]
        landing = (~self.contact & steppable & (z <= h_s)
                   & (z >= h_s - p.touchdown_depth))
        self.feet[..., 2] = np.where(landing, h_s, z)
        self.feet_vel = np.where(landing[..., None], 0.0, self.feet_vel)
        self.contact |= landing

    # ------------------------------------------------------------------
    # control step

    def step(self, action):
        """Advance every environment by one control step.

        ``action`` is (N, 12) normalized; returns (StepState, StepEvents).
        """
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.n, ACTION_DIM):
            raise ValueError(f"expected action shape {(self.n, ACTION_DIM)}, "
                             f"got {action.shape}")
        bad = ~np.isfinite(action).all(axis=1)
        if bad.any():
            self.fault |= bad
            action = np.where(bad[:, None], 0.0, action)

        p = self.params
        targets = scale_action(action, p)
        self._prev_vel = self.vel.copy()
        self._prev_rates = self.rates.copy()
        self._prev_feet_vel = self.feet_vel.copy()

        h = p.dt / p.substeps
        for _ in range(p.substeps):
            self._substep(targets, h)
        self.steps += 1

        started = (self.steps > 1).astype(np.float64)
        base_acc = (self.vel - self._prev_vel) / p.dt * started[:, None]
        ang_acc = (self.rates - self._prev_rates) / p.dt * started[:, None]
        feet_acc = ((self.feet_vel - self._prev_feet_vel) / p.dt
                    * started[:, None, None])

        collisions = self._collisions()
        events = self.check_termination(collisions)

        forward = self.pos[:, 0] - self.spawn[:, 0]
        self.max_forward = np.maximum(self.max_forward, forward)

        state = StepState(
            pos=self.pos[:, :2].copy(),
            z=self.pos[:, 2].copy(),
            yaw=self.yaw.copy(),
            vel=self.vel.copy(),
            ang=self.rates.copy(),
            base_acc=base_acc,
            ang_acc=ang_acc,
            feet_acc=feet_acc,
            qdot=self._leg_frame()[1].reshape(self.n, ACTION_DIM),
            action=targets,
            prev_action=self.prev_targets.copy(),
            torques=self.torques * p.torque_lever_arm,
            contact_force_norms=self.contact_forces.copy(),
            collisions=collisions,
            terminated=events.terminated,
            gravity=projected_gravity(self.rp[:, 0], self.rp[:, 1]),
            target=self.target.copy(),
            target_yaw=self.target_yaw.copy(),
            t=self.steps * p.dt,
            T=self.T.copy(),
            qdot_limit=p.qdot_limit,
            torque_limit=p.tau_limit * p.torque_lever_arm,
            command_velocity=self.vel_cmd.copy() if self.velocity_mode else None,
            command_yaw_rate=self.yaw_cmd.copy() if self.velocity_mode else None,
        )
        self.prev_targets = targets
        self.prev_action = action.copy()
        return state, events

    def _collisions(self):
        """Base/leg-proxy terrain intersections (collision penalty)."""
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        h_base, step_base, _ = self.bank.lookup(
            self.grid_idx, self.pos[:, 0], self.pos[:, 1])
        base_hit = step_base & (h_base > self.pos[:, 2])

        hip_x = self.pos[:, 0][:, None] + c[:, None] * NOMINAL_OFFSETS[:, 0] \
            - s[:, None] * NOMINAL_OFFSETS[:, 1]
        hip_y = self.pos[:, 1][:, None] + s[:, None] * NOMINAL_OFFSETS[:, 0] \
            + c[:, None] * NOMINAL_OFFSETS[:, 1]
        hip_z = self.pos[:, 2][:, None] * np.ones(N_LEGS)
        leg_hit = np.zeros((self.n, N_LEGS), dtype=bool)
        for frac in (0.3, 0.6):
            px = hip_x + frac * (self.feet[..., 0] - hip_x)
            py = hip_y + frac * (self.feet[..., 1] - hip_y)
            pz = hip_z + frac * (self.feet[..., 2] - hip_z)
            gi = np.repeat(self.grid_idx, N_LEGS)
            h, stp, _ = self.bank.lookup(gi, px.ravel(), py.ravel())
            hit = (stp & (h > pz.ravel() + 0.02)).reshape(self.n, N_LEGS)
            leg_hit |= hit
        return base_hit.astype(np.float64) + leg_hit.sum(axis=1)

    def check_termination(self, collisions=None) -> StepEvents:
        """Failure/timeout flags for the current state."""
        p = self.params
        h_base, step_base, support = self.bank.lookup(
            self.grid_idx, self.pos[:, 0], self.pos[:, 1])
        fell = self.pos[:, 2] - support < p.fall_margin
        tilted = (np.abs(self.rp) > p.tilt_limit).any(axis=1)
        base_col = step_base & (h_base > self.pos[:, 2])
        nx, ny = self.bank.shape
        oob = ((self.pos[:, 0] < self.bank.origin[0])
               | (self.pos[:, 0] >= self.bank.origin[0] + nx * CELL_SIZE)
               | (self.pos[:, 1] < self.bank.origin[1])
               | (self.pos[:, 1] >= self.bank.origin[1] + ny * CELL_SIZE))
        terminated = fell | tilted | base_col | oob | self.fault
        timeout = (self.steps >= self.max_steps) & ~terminated
        return StepEvents(terminated=terminated, timeout=timeout, fell=fell,
                          tilted=tilted, base_collision=base_col,
                          out_of_bounds=oob, fault=self.fault.copy())

    # ------------------------------------------------------------------
    # observations

    def build_observation(self) -> np.ndarray:
        """(N, OBS_DIM) observation; see OBS_SLICES for the layout."""
        p = self.params
        n = self.n
        obs = np.empty((n, OBS_DIM))
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        obs[:, 0] = c * self.vel[:, 0] + s * self.vel[:, 1]
        obs[:, 1] = -s * self.vel[:, 0] + c * self.vel[:, 1]
        obs[:, 2] = self.vel[:, 2]
        obs[:, 3:6] = self.rates
        obs[:, 6:9] = projected_gravity(self.rp[:, 0], self.rp[:, 1])
        b, qd, _, _ = self._leg_frame()
        obs[:, 9:21] = (b - NOMINAL_OFFSETS[None]).reshape(n, 12)
        obs[:, 21:33] = qd.reshape(n, 12)
        obs[:, 33:45] = self.prev_action
        obs[:, 45:45 + SCAN_DIM] = self._scan(c, s)
        lo = OBS_SLICES["rel_target"][0]
        if self.velocity_mode:
            # The command channel carries the body-frame velocity target.
            obs[:, lo] = self.vel_cmd[:, 0]
            obs[:, lo + 1] = self.vel_cmd[:, 1]
            obs[:, lo + 2] = 1.0
            obs[:, lo + 3] = 0.0
        else:
            dx = self.target[:, 0] - self.pos[:, 0]
            dy = self.target[:, 1] - self.pos[:, 1]
            obs[:, lo] = c * dx + s * dy
            obs[:, lo + 1] = -s * dx + c * dy
            err = wrap_angle(self.target_yaw - self.yaw)
            obs[:, lo + 2] = np.cos(err)
            obs[:, lo + 3] = np.sin(err)
        obs[:, lo + 4] = (self.max_steps - self.steps) / self.max_steps
        return obs

    def _scan(self, c, s):
        px = (self.pos[:, 0][:, None]
              + c[:, None] * _SCAN_GRID[None, :, 0]
              - s[:, None] * _SCAN_GRID[None, :, 1]
              + self.drift[:, 0][:, None])
        py = (self.pos[:, 1][:, None]
              + s[:, None] * _SCAN_GRID[None, :, 0]
              + c[:, None] * _SCAN_GRID[None, :, 1]
              + self.drift[:, 1][:, None])
        gi = np.repeat(self.grid_idx, SCAN_DIM)
        h, _, _ = self.bank.lookup(gi, px.ravel(), py.ravel())
        h = h.reshape(self.n, SCAN_DIM)
        return np.clip(h - self.pos[:, 2][:, None], -1.0, 1.0)

    # ------------------------------------------------------------------
    # state access (oracle agents, symmetry tests, trajectory dumps)

    STATE_FIELDS = ("pos", "yaw", "rp", "vel", "rates", "feet", "feet_vel",
                    "contact", "prev_action", "prev_targets", "steps",
                    "max_steps", "T", "target", "target_yaw", "drift",
                    "com_bias", "spawn", "spawn_yaw", "fault", "vel_cmd",
                    "yaw_cmd")

    def get_state(self) -> dict[str, np.ndarray]:
        return {f: getattr(self, f).copy() for f in self.STATE_FIELDS}

    def set_state(self, state: dict[str, np.ndarray]) -> None:
        for f in self.STATE_FIELDS:
            getattr(self, f)[:] = state[f]
