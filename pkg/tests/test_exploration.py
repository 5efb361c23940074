import numpy as np
import pytest
import torch

from sparsegait import exploration
from sparsegait.configs import RndConfig
from sparsegait.exploration import (MIRRORS, RndPair, SYMMETRY_MAPS, augment,
                                    build_symmetry_map, mirror)
from sparsegait.sim import ACTION_DIM, OBS_DIM, OBS_SLICES


class TestSymmetryMap:
    @pytest.mark.parametrize("which", MIRRORS)
    def test_involution_exact(self, which):
        m = SYMMETRY_MAPS[which]
        assert np.array_equal(m.obs_perm[m.obs_perm], np.arange(OBS_DIM))
        assert np.all(m.obs_sign[m.obs_perm] * m.obs_sign == 1.0)
        assert np.array_equal(m.act_perm[m.act_perm], np.arange(ACTION_DIM))
        assert np.all(m.act_sign[m.act_perm] * m.act_sign == 1.0)

    def test_commute_and_closure(self):
        rng = np.random.default_rng(0)
        obs = rng.normal(size=(16, OBS_DIM))
        act = rng.normal(size=(16, ACTION_DIM))
        lr_fb = mirror(mirror((obs, act), "LR"), "FB")
        fb_lr = mirror(mirror((obs, act), "FB"), "LR")
        direct = mirror((obs, act), "LRFB")
        for a, b in zip(lr_fb, fb_lr):
            assert np.array_equal(a, b)
        for a, b in zip(lr_fb, direct):
            assert np.array_equal(a, b)

    def test_group_order_four(self):
        rng = np.random.default_rng(1)
        obs = rng.normal(size=(4, OBS_DIM))
        act = rng.normal(size=(4, ACTION_DIM))
        seen = {mirror((obs, act), w)[0].tobytes() for w in MIRRORS}
        seen.add(obs.tobytes())
        assert len(seen) == 4
        for w in MIRRORS:
            twice = mirror(mirror((obs, act), w), w)
            assert np.array_equal(twice[0], obs)
            assert np.array_equal(twice[1], act)

    def test_unknown_mirror_rejected(self):
        with pytest.raises(ValueError):
            mirror((np.zeros((1, OBS_DIM)), np.zeros((1, ACTION_DIM))), "UD")
        with pytest.raises(ValueError):
            build_symmetry_map("nope")

    def test_lr_fixed_point(self):
        # Zero lateral state with a laterally centered scan is unchanged.
        obs = np.zeros((1, OBS_DIM))
        obs[0, slice(*OBS_SLICES["lin_vel"])] = [0.5, 0.0, -0.1]
        obs[0, slice(*OBS_SLICES["gravity"])] = [0.0, 0.0, -1.0]
        obs[0, slice(*OBS_SLICES["heading_err"])] = [1.0, 0.0]
        scan = np.linspace(-0.5, 0.5, 13)[:, None] * np.ones(9)
        obs[0, slice(*OBS_SLICES["scan"])] = scan.reshape(-1)
        act = np.zeros((1, ACTION_DIM))
        m_obs, m_act = mirror((obs, act), "LR")
        assert np.array_equal(m_obs, obs)
        assert np.array_equal(m_act, act)

    def test_scan_mirrors_are_axis_reversals(self):
        obs = np.zeros((1, OBS_DIM))
        lo, hi = OBS_SLICES["scan"]
        scan = np.arange(117, dtype=float).reshape(13, 9)
        obs[0, lo:hi] = scan.reshape(-1)
        lr = mirror((obs, np.zeros((1, 12))), "LR")[0][0, lo:hi].reshape(13, 9)
        fb = mirror((obs, np.zeros((1, 12))), "FB")[0][0, lo:hi].reshape(13, 9)
        assert np.array_equal(lr, scan[:, ::-1])
        assert np.array_equal(fb, scan[::-1, :])


class TestAugment:
    def _batch(self, b=64):
        rng = np.random.default_rng(2)
        return {
            "obs": rng.normal(size=(b, OBS_DIM)).astype(np.float32),
            "actions": rng.normal(size=(b, ACTION_DIM)).astype(np.float32),
            "old_mu": rng.normal(size=(b, ACTION_DIM)).astype(np.float32),
            "log_probs": rng.normal(size=b),
            "advantages": rng.normal(size=b),
            "returns": rng.normal(size=b),
        }

    def test_four_x_size(self):
        batch = self._batch(64)
        out = augment(batch)
        assert out["obs"].shape == (256, OBS_DIM)
        assert out["actions"].shape == (256, ACTION_DIM)

    def test_targets_tiled(self):
        batch = self._batch(32)
        out = augment(batch)
        for key in ("advantages", "returns", "log_probs"):
            assert np.array_equal(out[key], np.tile(batch[key], 4))

    def test_augment_twice_is_sixteen_x(self):
        batch = self._batch(8)
        out = augment(augment(batch))
        assert out["obs"].shape == (128, OBS_DIM)

    def test_mirrored_blocks_match_mirror_op(self):
        batch = self._batch(16)
        out = augment(batch)
        for k, which in enumerate(MIRRORS, start=1):
            want_obs, want_act = mirror((batch["obs"], batch["actions"]),
                                        which)
            assert np.array_equal(out["obs"][16 * k:16 * (k + 1)], want_obs)
            assert np.array_equal(out["actions"][16 * k:16 * (k + 1)],
                                  want_act)


class TestRnd:
    CFG = RndConfig(output_dim=8, m1_hidden=(32, 32), m2_hidden=(64, 64))

    def _pairs(self, rnd, n, seed):
        rng = np.random.default_rng(seed)
        return (rng.normal(size=(n, OBS_DIM)), rng.normal(size=(n, ACTION_DIM)))

    def test_zero_weight_gives_zero_reward(self):
        cfg = RndConfig(reward_weight=0.0, output_dim=4,
                        m1_hidden=(16,), m2_hidden=(16,))
        rnd = RndPair(OBS_DIM, ACTION_DIM, cfg, seed=0)
        obs, act = self._pairs(rnd, 32, 0)
        assert np.all(rnd.curiosity_reward(obs, act) == 0.0)

    def test_curiosity_nonnegative(self):
        rnd = RndPair(OBS_DIM, ACTION_DIM, self.CFG, seed=0)
        obs, act = self._pairs(rnd, 256, 1)
        rnd.update_normalizer(obs, act)
        assert np.all(rnd.curiosity_reward(obs, act) >= 0.0)

    def test_requires_warmup(self):
        rnd = RndPair(OBS_DIM, ACTION_DIM, self.CFG, seed=0)
        obs, act = self._pairs(rnd, 8, 2)
        with pytest.raises(RuntimeError):
            rnd.curiosity_reward(obs, act)

    def test_nonfinite_input_rejected(self):
        rnd = RndPair(OBS_DIM, ACTION_DIM, self.CFG, seed=0)
        obs, act = self._pairs(rnd, 8, 3)
        rnd.update_normalizer(obs, act)
        obs[0, 0] = np.inf
        with pytest.raises(ValueError):
            rnd.curiosity_reward(obs, act)

    def test_loss_nonnegative_and_decreasing(self):
        rnd = RndPair(OBS_DIM, ACTION_DIM, self.CFG, seed=1)
        obs, act = self._pairs(rnd, 512, 4)
        rnd.update_normalizer(obs, act)
        losses = [rnd.rnd_update(obs, act) for _ in range(300)]
        assert all(v >= 0.0 for v in losses)
        first = np.mean(losses[:50])
        last = np.mean(losses[-50:])
        assert last < first

    def test_m2_frozen(self):
        rnd = RndPair(OBS_DIM, ACTION_DIM, self.CFG, seed=2)
        obs, act = self._pairs(rnd, 128, 5)
        rnd.update_normalizer(obs, act)
        checksum = rnd.m2_checksum()
        for _ in range(200):
            rnd.rnd_update(obs, act)
        assert rnd.m2_checksum() == checksum

    def test_empty_batch_rejected(self):
        rnd = RndPair(OBS_DIM, ACTION_DIM, self.CFG, seed=0)
        with pytest.raises(ValueError):
            rnd.rnd_update(np.zeros((0, OBS_DIM)), np.zeros((0, ACTION_DIM)))

    def test_distillation_separates_seen_from_unseen(self):
        # Short-horizon version of the acceptance experiment.
        rnd = RndPair(OBS_DIM, ACTION_DIM, self.CFG, seed=3)
        fit = self._pairs(rnd, 512, 6)
        held = self._pairs(rnd, 512, 7)
        rnd.update_normalizer(*fit)
        before = rnd.curiosity_reward(*fit).mean()
        for _ in range(800):
            rnd.rnd_update(*fit)
        after_fit = rnd.curiosity_reward(*fit).mean()
        after_held = rnd.curiosity_reward(*held).mean()
        assert after_fit < 0.5 * before
        assert after_held > 2.0 * after_fit
