import numpy as np
import pytest

from magcath import nn
from magcath.core import ActionDelta
from magcath.dqn import (N_ACTIONS, DqnConfig, ReplayBuffer, action_to_index,
                         epsilon_at, greedy_policy, index_to_action,
                         load_qnet, make_qnet, select_action, update_step)


class TestActionCodec:
    def test_corners_and_center(self):
        assert index_to_action(0) == ActionDelta(-5.0, -5.0)
        assert index_to_action(60) == ActionDelta(0.0, 0.0)
        assert index_to_action(120) == ActionDelta(5.0, 5.0)

    def test_bijection_all_121(self):
        seen = set()
        for idx in range(N_ACTIONS):
            a = index_to_action(idx)
            assert action_to_index(a) == idx
            seen.add((a.dtheta1, a.dtheta3))
        assert len(seen) == 121

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            index_to_action(121)
        with pytest.raises(ValueError):
            index_to_action(-1)
        with pytest.raises(ValueError):
            action_to_index(ActionDelta(6.0, 0.0))


class TestEpsilonSchedule:
    def test_endpoints(self):
        assert epsilon_at(0) == 1.0
        assert epsilon_at(6000) == 0.05
        assert epsilon_at(60_000) == 0.05

    def test_midpoint(self):
        assert epsilon_at(3000) == pytest.approx(0.525)

    def test_monotone_and_bounded(self):
        values = [epsilon_at(s) for s in range(0, 12_000, 37)]
        assert all(0.05 <= v <= 1.0 for v in values)
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_negative_step_rejected(self):
        with pytest.raises(ValueError):
            epsilon_at(-1)


class TestSelectAction:
    def test_greedy_unique_max(self):
        qnet = make_qnet(np.random.default_rng(0))
        # Force a known argmax through the last layer bias.
        for layer in qnet.layers:
            layer.W[...] = 0.0
            layer.b[...] = 0.0
        qnet.layers[-1].b[37] = 1.0
        rng = np.random.default_rng(1)
        obs = rng.random(4)
        for _ in range(10):
            assert select_action(qnet, obs, 0.0, rng) == 37

    def test_tie_breaks_to_lowest_index(self):
        qnet = make_qnet(np.random.default_rng(0))
        for layer in qnet.layers:
            layer.W[...] = 0.0
            layer.b[...] = 0.0
        qnet.layers[-1].b[10] = 2.0
        qnet.layers[-1].b[90] = 2.0
        assert select_action(qnet, np.zeros(4), 0.0,
                             np.random.default_rng(2)) == 10

    def test_uniform_when_fully_random(self):
        qnet = make_qnet(np.random.default_rng(0))
        rng = np.random.default_rng(3)
        draws = np.array([select_action(qnet, np.zeros(4), 1.0, rng)
                          for _ in range(100_000)])
        counts = np.bincount(draws, minlength=N_ACTIONS)
        # Chi-squared uniformity test at alpha = 0.01; the 99th percentile of
        # chi2 with 120 degrees of freedom is 158.95.
        chi2 = ((counts - counts.mean()) ** 2 / counts.mean()).sum()
        assert chi2 < 158.95


class TestReplayBuffer:
    def test_fifo_eviction(self):
        buf = ReplayBuffer(capacity=100)
        for i in range(105):
            buf.add(np.full(4, i), i % N_ACTIONS, -float(i), np.full(4, i + 1),
                    False)
        assert len(buf) == 100
        # The first five entries are gone; slot 0..4 now hold items 100..104.
        stored_first = {buf.obs[i, 0] for i in range(5)}
        assert stored_first == {100.0, 101.0, 102.0, 103.0, 104.0}

    def test_sample_shapes(self):
        buf = ReplayBuffer(capacity=50)
        for i in range(20):
            buf.add(np.zeros(4), 3, -1.0, np.ones(4), i % 7 == 0)
        obs, act, rew, nxt, done = buf.sample(16, np.random.default_rng(0))
        assert obs.shape == (16, 4) and act.shape == (16, 1)
        assert rew.shape == (16,) and done.shape == (16,)


class TestUpdateStep:
    def _batch(self, qnet, target, rewards, dones, rng):
        obs = rng.random((8, 4))
        acts = rng.integers(0, N_ACTIONS, (8, 1)).astype(float)
        nxt = rng.random((8, 4))
        return (obs, acts, np.asarray(rewards, dtype=float),
                nxt, np.asarray(dones, dtype=float))

    def test_terminal_target_is_reward(self):
        rng = np.random.default_rng(0)
        qnet = make_qnet(rng)
        target = make_qnet(rng)
        # All terminal, reward -1: y = -1 regardless of the target net.
        obs = rng.random((4, 4))
        acts = np.zeros((4, 1))
        batch = (obs, acts, -np.ones(4), rng.random((4, 4)), np.ones(4))
        opt = nn.Adam(qnet.params(), lr=0.0)   # no movement; just loss value
        q_before = qnet.forward(obs)[np.arange(4), 0]
        loss = update_step(qnet, target, batch, opt, gamma=0.99, tau=0.0)
        assert loss == pytest.approx(float(np.mean((q_before + 1.0) ** 2)))

    def test_bootstrap_target_hand_value(self):
        # y = r + gamma * max Q_target = -1 + 0.99 * (-10) = -10.9
        rng = np.random.default_rng(1)
        qnet = make_qnet(rng)
        target = make_qnet(rng)
        for layer in target.layers:
            layer.W[...] = 0.0
            layer.b[...] = 0.0
        target.layers[-1].b[...] = -10.0
        obs = rng.random((1, 4))
        batch = (obs, np.zeros((1, 1)), np.array([-1.0]), rng.random((1, 4)),
                 np.zeros(1))
        opt = nn.Adam(qnet.params(), lr=0.0)
        q0 = qnet.forward(obs)[0, 0]
        loss = update_step(qnet, target, batch, opt, gamma=0.99, tau=0.0)
        assert loss == pytest.approx((q0 - (-10.9)) ** 2)

    def test_zero_td_error_leaves_params_unchanged(self):
        rng = np.random.default_rng(2)
        qnet = make_qnet(rng)
        target = make_qnet(rng)
        nn.assign_params(target.params(), nn.copy_params(qnet.params()))
        obs = rng.random((6, 4))
        acts = rng.integers(0, N_ACTIONS, (6, 1)).astype(float)
        # Terminal transitions whose rewards equal the current Q values.
        q = qnet.forward(obs)
        rewards = q[np.arange(6), acts[:, 0].astype(int)]
        batch = (obs, acts, rewards, rng.random((6, 4)), np.ones(6))
        before = nn.copy_params(qnet.params())
        loss = update_step(qnet, target, batch, nn.Adam(qnet.params(), lr=1e-3),
                           gamma=0.99, tau=0.0)
        assert loss == pytest.approx(0.0, abs=1e-20)
        for k, v in qnet.params().items():
            assert np.array_equal(v, before[k])

    def test_repeated_soft_updates_blend_geometrically(self):
        rng = np.random.default_rng(3)
        qnet = make_qnet(rng)
        target = make_qnet(rng)
        init_target = nn.copy_params(target.params())
        online = nn.copy_params(qnet.params())
        k = 200
        for _ in range(k):
            nn.polyak_update(target.params(), qnet.params(), 0.005)
        keep = (1.0 - 0.005) ** k
        for name, tp in target.params().items():
            expect = init_target[name] * keep + online[name] * (1.0 - keep)
            assert np.allclose(tp, expect, atol=1e-12), name


class TestPolicy:
    def test_greedy_policy_returns_actions(self):
        qnet = make_qnet(np.random.default_rng(0))
        policy = greedy_policy(qnet)
        a = policy(np.zeros(4))
        assert isinstance(a, ActionDelta)
        assert -5.0 <= a.dtheta1 <= 5.0
        assert -5.0 <= a.dtheta3 <= 5.0

    def test_checkpoint_round_trip(self, tmp_path):
        qnet = make_qnet(np.random.default_rng(4))
        nn.save_checkpoint(tmp_path / "qnet", qnet.params(), {})
        clone = load_qnet(tmp_path / "qnet")
        obs = np.random.default_rng(5).random((7, 4))
        assert np.array_equal(qnet.forward(obs), clone.forward(obs))
