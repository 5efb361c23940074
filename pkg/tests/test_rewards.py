import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsegait import rewards
from sparsegait.rewards import (MaskParams, StepState, compute_rewards,
                                load_profile, mask_duration, mask_heading,
                                mask_position, named_profile, task_reward,
                                velocity_tracking_rewards, wrap_angle)


def make_state(n=1, **overrides) -> StepState:
    state = StepState(
        pos=np.zeros((n, 2)),
        z=np.full(n, 0.6),
        yaw=np.zeros(n),
        vel=np.zeros((n, 3)),
        ang=np.zeros((n, 3)),
        base_acc=np.zeros((n, 3)),
        ang_acc=np.zeros((n, 3)),
        feet_acc=np.zeros((n, 4, 3)),
        qdot=np.zeros((n, 12)),
        action=np.zeros((n, 12)),
        prev_action=np.zeros((n, 12)),
        torques=np.zeros((n, 12)),
        contact_force_norms=np.zeros((n, 4)),
        collisions=np.zeros(n),
        terminated=np.zeros(n, dtype=bool),
        gravity=np.tile([0.0, 0.0, -1.0], (n, 1)),
        target=np.tile([5.0, 0.0], (n, 1)),
        target_yaw=np.zeros(n),
        t=np.full(n, 1.0),
        T=np.full(n, 6.0),
        qdot_limit=2.0,
        torque_limit=105.0,
    )
    for key, value in overrides.items():
        setattr(state, key, np.asarray(value, dtype=getattr(
            getattr(state, key), "dtype", float)).reshape(
                getattr(state, key).shape))
    return state


class TestMasks:
    def test_duration_window(self):
        assert mask_duration(5.5, 6.0, 2.0) == pytest.approx(0.5, abs=1e-12)

    def test_duration_outside(self):
        assert mask_duration(3.0, 6.0, 2.0) == 0.0

    def test_duration_at_end(self):
        assert mask_duration(6.0, 6.0, 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_duration_bad_window(self):
        with pytest.raises(ValueError):
            mask_duration(1.0, 6.0, 0.0)

    def test_position_mask(self):
        assert mask_position([0.0, 0.0], [0.5, 0.0], 1.0) == 1.0
        assert mask_position([0.0, 0.0], [1.0, 0.0], 1.0) == 0.0

    def test_heading_mask_wraps(self):
        assert mask_heading(np.pi - 0.1, -np.pi + 0.1, 0.5) == 1.0

    @given(st.floats(0.0, 10.0), st.floats(0.1, 10.0), st.floats(0.1, 5.0))
    @settings(max_examples=60, deadline=None)
    def test_duration_range(self, t, T, t0):
        v = float(mask_duration(min(t, T), T, t0))
        assert v == 0.0 or v == pytest.approx(1.0 / t0)


class TestTaskReward:
    def test_at_target_in_window(self):
        assert task_reward([0.0, 0.0], [0.0, 0.0], 5.0, 6.0, 2.0, 10.0) \
            == pytest.approx(5.0, abs=1e-12)

    def test_one_meter_away(self):
        assert task_reward([0.0, 0.0], [1.0, 0.0], 5.0, 6.0, 2.0, 10.0) \
            == pytest.approx(2.5, abs=1e-12)

    def test_outside_window(self):
        assert task_reward([0.0, 0.0], [0.0, 0.0], 3.9, 6.0, 2.0, 10.0) == 0.0

    @given(st.floats(-3, 3), st.floats(-3, 3))
    @settings(max_examples=60, deadline=None)
    def test_maximized_at_target(self, dx, dy):
        at = task_reward([0.0, 0.0], [0.0, 0.0], 5.0, 6.0, 2.0, 10.0)
        off = task_reward([dx, dy], [0.0, 0.0], 5.0, 6.0, 2.0, 10.0)
        assert off <= at + 1e-12


GEN = named_profile("generalist")
S2 = named_profile("s2")
BB = named_profile("bb")

# Hand-evaluated expectations for every reward term; unlisted terms are
# zero.  Entries: (name, profile, iteration, state overrides, expected).
FIXTURES = [
    ("at_target_in_window", GEN, 500,
     dict(target=[0.0, 0.0], t=5.0),
     {"position_tracking": 5.0, "heading_tracking": 1.25}),
    ("one_meter_from_target", GEN, 500,
     dict(target=[1.0, 0.0], t=5.0),
     {"position_tracking": 2.5, "heading_tracking": 1.25, "dont_wait": -1.0}),
    ("before_reward_windows", GEN, 500,
     dict(target=[0.0, 0.0], t=1.5),
     {}),
    ("heading_window_opens_first", GEN, 500,
     dict(target=[0.0, 0.0], t=3.0),
     {"position_tracking": 0.0, "heading_tracking": 1.25}),
    ("heading_half_radian", GEN, 500,
     dict(target=[0.0, 0.0], t=5.0, yaw=0.5),
     {"position_tracking": 5.0, "heading_tracking": 1.25 / 1.25}),
    ("early_termination", GEN, 500,
     dict(terminated=[True], target=[4.0, 0.0], vel=[[0.5, 0.0, 0.0]]),
     {"termination": -200.0}),
    ("contact_force_at_clip_boundary", GEN, 500,
     dict(contact_force_norms=[[700.0, 0.0, 0.0, 0.0]],
          vel=[[0.5, 0.0, 0.0]]),
     {"contact_force": 0.0}),
    ("contact_force_above_clip", GEN, 500,
     dict(contact_force_norms=[[1400.0, 0.0, 0.0, 0.0]],
          vel=[[0.5, 0.0, 0.0]]),
     {"contact_force": -2.5e-5 * 700.0 ** 2}),
    ("contact_force_mid_clip", GEN, 500,
     dict(contact_force_norms=[[1000.0, 0.0, 0.0, 0.0]],
          vel=[[0.5, 0.0, 0.0]]),
     {"contact_force": -2.5e-5 * 300.0 ** 2}),
    ("dont_wait_standing_far", GEN, 500,
     dict(vel=[[0.1, 0.0, 0.0]], target=[2.0, 0.0]),
     {"dont_wait": -1.0}),
    ("move_in_direction_active", GEN, 0,
     dict(vel=[[0.5, 0.0, 0.0]], target=[2.0, 0.0]),
     {"move_in_direction": 1.0}),
    ("move_in_direction_reversed", GEN, 0,
     dict(vel=[[-0.5, 0.0, 0.0]], target=[2.0, 0.0]),
     {"move_in_direction": -1.0}),
    ("move_in_direction_expired", GEN, 150,
     dict(vel=[[0.5, 0.0, 0.0]], target=[2.0, 0.0]),
     {"move_in_direction": 0.0}),
    ("joint_velocity_quadratic", GEN, 500,
     dict(qdot=[[0.5] * 12], vel=[[0.5, 0.0, 0.0]]),
     {"joint_velocity": -0.001 * 12 * 0.25}),
    ("joint_velocity_limit_overflow", GEN, 500,
     dict(qdot=[[1.95] + [0.0] * 11], vel=[[0.5, 0.0, 0.0]]),
     {"joint_velocity": -0.001 * 1.95 ** 2,
      "joint_velocity_limit": -1.0 * (1.95 - 0.9 * 2.0)}),
    ("base_acceleration", GEN, 500,
     dict(base_acc=[[1.0, 0.0, 0.0]], ang_acc=[[0.0, 2.0, 0.0]],
          vel=[[0.5, 0.0, 0.0]]),
     {"base_accel": -0.001 * (1.0 + 0.02 * 4.0)}),
    ("feet_acceleration", GEN, 500,
     dict(feet_acc=[[[3.0, 4.0, 0.0]] + [[0.0] * 3] * 3],
          vel=[[0.5, 0.0, 0.0]]),
     {"feet_accel": -0.0005 * 5.0}),
    ("action_rate", GEN, 500,
     dict(action=[[0.1] + [0.0] * 11], vel=[[0.5, 0.0, 0.0]]),
     {"action_rate": -0.01 * 0.1 ** 2}),
    ("torque_quadratic", GEN, 500,
     dict(torques=[[50.0] + [0.0] * 11], vel=[[0.5, 0.0, 0.0]]),
     {"torque": -1e-5 * 2500.0}),
    ("torque_limit_overflow", GEN, 500,
     dict(torques=[[120.0] + [0.0] * 11], vel=[[0.5, 0.0, 0.0]]),
     {"torque": -1e-5 * 120.0 ** 2, "torque_limit": -0.2 * 15.0}),
    ("collision_count", GEN, 500,
     dict(collisions=[2.0], vel=[[0.5, 0.0, 0.0]]),
     {"collision": -2.0}),
    ("stand_still_near_target", GEN, 500,
     dict(target=[0.0, 0.0], t=5.5, vel=[[0.1, 0.0, 0.0]],
          ang=[[0.0, 0.0, 0.2]]),
     {"position_tracking": 5.0, "heading_tracking": 1.25,
      "stand_still": -(2.5 * 0.1 + 1.0 * 0.2)}),
    ("s2_tracking_and_aggressive", S2, 500,
     dict(target=[0.0, 0.0], t=5.0, vel=[[1.5, 0.0, 0.0]]),
     {"position_tracking": 25.0 / 4.0, "heading_tracking": 12.0 / 4.0,
      "aggressive_motion": -5.0 * 0.25}),
    ("bb_stand_pose_and_torque", BB, 500,
     dict(target=[0.0, 0.0], t=5.5, z=0.7,
          gravity=[[0.1, -0.05, -0.99]],
          torques=[[100.0] + [0.0] * 11]),
     {"position_tracking": 25.0 / 4.0, "heading_tracking": 12.0 / 4.0,
      "torque": -2e-5 * 100.0 ** 2,
      "torque_limit": -0.5 * (100.0 - 0.8 * 105.0),
      "stand_pose": -5.0 * (0.1 + 0.1 ** 2 + 0.05 ** 2)}),
]


class TestRewardFixtures:
    @pytest.mark.parametrize(
        "name,profile,iteration,overrides,expected",
        FIXTURES, ids=[f[0] for f in FIXTURES])
    def test_fixture(self, name, profile, iteration, overrides, expected):
        state = make_state(**overrides)
        breakdown = compute_rewards(state, profile, iteration)
        for term, value in expected.items():
            assert breakdown.terms[term][0] == pytest.approx(
                value, abs=1e-9), term
        leftovers = set(breakdown.terms) - set(expected) - {"dont_wait"}
        for term in leftovers:
            assert breakdown.terms[term][0] == pytest.approx(
                0.0, abs=1e-9), term

    def test_total_is_sum(self):
        rng = np.random.default_rng(0)
        n = 100_000
        state = make_state(
            n=n,
            pos=rng.uniform(-5, 5, (n, 2)),
            z=rng.uniform(0.2, 1.0, n),
            yaw=rng.uniform(-4, 4, n),
            vel=rng.uniform(-2, 2, (n, 3)),
            ang=rng.uniform(-2, 2, (n, 3)),
            base_acc=rng.uniform(-5, 5, (n, 3)),
            ang_acc=rng.uniform(-5, 5, (n, 3)),
            feet_acc=rng.uniform(-10, 10, (n, 4, 3)),
            qdot=rng.uniform(-3, 3, (n, 12)),
            action=rng.uniform(-0.3, 0.3, (n, 12)),
            prev_action=rng.uniform(-0.3, 0.3, (n, 12)),
            torques=rng.uniform(-150, 150, (n, 12)),
            contact_force_norms=rng.uniform(0, 1500, (n, 4)),
            collisions=rng.integers(0, 3, n),
            terminated=rng.random(n) < 0.05,
            target=rng.uniform(-5, 5, (n, 2)),
            target_yaw=rng.uniform(-4, 4, n),
            t=rng.uniform(0, 6, n),
            T=np.full(n, 6.0),
        )
        for profile in (GEN, S2, BB):
            breakdown = compute_rewards(state, profile, 10)
            total = np.zeros(n)
            for term in breakdown.terms.values():
                total += term
            assert np.array_equal(breakdown.total, total)

    def test_generalist_posture_terms_identically_zero(self):
        rng = np.random.default_rng(1)
        n = 2000
        state = make_state(n=n, pos=rng.uniform(-1, 1, (n, 2)),
                           vel=rng.uniform(-3, 3, (n, 3)),
                           z=rng.uniform(0.2, 1.0, n),
                           t=rng.uniform(0, 6, n))
        breakdown = compute_rewards(state, GEN, 10)
        assert np.all(breakdown.terms["aggressive_motion"] == 0.0)
        assert np.all(breakdown.terms["stand_pose"] == 0.0)

    def test_episode_start_zero_accels_by_contract(self):
        # The simulator supplies zero accelerations on the first step;
        # the terms then contribute exactly nothing.
        state = make_state()
        breakdown = compute_rewards(state, GEN, 500)
        assert breakdown.terms["base_accel"][0] == 0.0
        assert breakdown.terms["feet_accel"][0] == 0.0


class TestVelocityTracking:
    def test_exact_tracking(self):
        state = make_state(vel=[[0.8, 0.0, 0.0]])
        state.command_velocity = np.array([[0.8, 0.0]])
        state.command_yaw_rate = np.zeros(1)
        breakdown = velocity_tracking_rewards(state, load_profile(
            "velocity_ablation"))
        assert breakdown.terms["velocity_tracking"][0] == pytest.approx(
            1.0, abs=1e-12)
        assert breakdown.terms["yaw_rate_tracking"][0] == pytest.approx(
            0.5, abs=1e-12)

    def test_perpendicular_error(self):
        state = make_state(vel=[[0.0, 0.8, 0.0]])
        state.command_velocity = np.array([[0.8, 0.0]])
        state.command_yaw_rate = np.zeros(1)
        breakdown = velocity_tracking_rewards(state, load_profile(
            "velocity_ablation"))
        assert breakdown.terms["velocity_tracking"][0] == pytest.approx(
            np.exp(-1.28 / 0.25), abs=1e-12)

    def test_regularization_shared_with_navigation(self):
        rng = np.random.default_rng(2)
        n = 500
        overrides = dict(
            qdot=rng.uniform(-3, 3, (n, 12)),
            torques=rng.uniform(-150, 150, (n, 12)),
            base_acc=rng.uniform(-5, 5, (n, 3)),
            ang_acc=rng.uniform(-5, 5, (n, 3)),
            feet_acc=rng.uniform(-10, 10, (n, 4, 3)),
            action=rng.uniform(-0.3, 0.3, (n, 12)),
            contact_force_norms=rng.uniform(0, 1500, (n, 4)),
            collisions=rng.integers(0, 3, n),
            terminated=rng.random(n) < 0.1,
        )
        state = make_state(n=n, **overrides)
        state.command_velocity = np.zeros((n, 2))
        state.command_yaw_rate = np.zeros(n)
        vel_profile = load_profile("velocity_ablation")
        nav = compute_rewards(state, GEN, 500)
        vel = velocity_tracking_rewards(state, vel_profile, 500)
        shared = ("termination", "collision", "joint_velocity",
                  "joint_velocity_limit", "base_accel", "feet_accel",
                  "action_rate", "torque", "torque_limit", "contact_force")
        for term in shared:
            assert np.array_equal(nav.terms[term], vel.terms[term]), term

    def test_requires_commands(self):
        with pytest.raises(ValueError):
            velocity_tracking_rewards(make_state(), load_profile(
                "velocity_ablation"))


class TestProfiles:
    def test_shipped_profiles_load(self):
        for name in ("generalist", "s2", "bb", "stepping_beams",
                     "velocity_ablation"):
            profile = load_profile(name)
            assert profile.task == name

    def test_file_profiles_match_named(self):
        # Shipped YAML files encode the same constants as the built-ins.
        for name in ("generalist", "s2", "bb"):
            assert load_profile(name) == named_profile(name)

    def test_unknown_profile(self):
        with pytest.raises(ValueError):
            named_profile("nope")

    def test_mask_params_positive(self):
        with pytest.raises(ValueError):
            MaskParams(window=-1.0)


class TestWrapAngle:
    @given(st.floats(-50, 50))
    @settings(max_examples=80, deadline=None)
    def test_range(self, x):
        w = float(wrap_angle(x))
        assert -np.pi < w <= np.pi
        assert np.isclose(np.sin(w), np.sin(x), atol=1e-9)
        assert np.isclose(np.cos(w), np.cos(x), atol=1e-9)
