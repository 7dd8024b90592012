"""Environment, targets, selection, gradient steps, and the training loop."""

import numpy as np
import pytest

from dppsel.errors import ConfigError, ValidationError
from dppsel.kernel import build_similarity
from dppsel.nn import Adam, FlopLedger, Mlp
from dppsel.rl import (
    Batch,
    RedqConfig,
    ReplayBuffer,
    SquashedGaussianPolicy,
    TabularEnsemble,
    ToyEnv,
    compute_target,
    critic_gradient_step,
    make_critic_ensemble,
    metrics_csv,
    policy_update,
    select_critics,
    target_polyak,
    toy_env_step,
    train_run,
)
from dppsel.rl.agent import policy_loss_and_output_grad
from dppsel.rng import make_rng


class TestToyEnv:
    def test_origin_fixed_point(self):
        nxt, reward, done = toy_env_step(np.zeros(2), np.zeros(1))
        np.testing.assert_array_equal(nxt, np.zeros(2))
        assert reward == 0.0
        assert not done

    def test_quadratic_position_cost(self):
        _, reward, _ = toy_env_step(np.array([1.0, 0.0]), np.zeros(1))
        assert reward == pytest.approx(-1.0)

    def test_rewards_nonpositive_and_clamped(self):
        rng = np.random.default_rng(0)
        state = rng.uniform(-1, 1, 2)
        for _ in range(500):
            action = rng.uniform(-3, 3, 1)  # deliberately out of range
            state, reward, _ = toy_env_step(state, action)
            assert reward <= 0.0
            assert -1.0 <= state[0] <= 1.0 and -1.0 <= state[1] <= 1.0

    def test_horizon_truncation(self):
        env = ToyEnv(horizon=5)
        rng = make_rng(0)
        env.reset(rng)
        flags = [env.step(np.zeros(1))[2] for _ in range(5)]
        assert flags == [False, False, False, False, True]

    def test_greedy_beats_random(self):
        def rollout(policy_fn, seed):
            env = ToyEnv()
            rng = make_rng(seed)
            state = env.reset(rng)
            total = 0.0
            done = False
            while not done:
                state, r, done = env.step(policy_fn(state, rng))
                total += r
            return total

        def greedy(state, rng):
            # accelerate against position, brake near the origin
            return np.array([np.clip(-4.0 * state[0] - 2.0 * state[1], -1, 1)])

        def random_policy(state, rng):
            return rng.uniform(-1, 1, 1)

        greedy_returns = [rollout(greedy, s) for s in range(10)]
        random_returns = [rollout(random_policy, s) for s in range(10)]
        assert np.mean(greedy_returns) > np.mean(random_returns)


class TestReplayBuffer:
    def test_ring_overwrite(self):
        buf = ReplayBuffer(3, 2, 1)
        for i in range(5):
            buf.add(np.full(2, i), np.zeros(1), float(i), np.zeros(2), 0.0)
        assert buf.size == 3
        batch = buf.sample(make_rng(0), 3)
        assert set(batch.rewards) == {2.0, 3.0, 4.0}

    def test_sample_empty_fails(self):
        with pytest.raises(ValidationError):
            ReplayBuffer(2, 1, 1).sample(make_rng(0), 1)


class TestConfig:
    def test_subset_bounds(self):
        with pytest.raises(ConfigError):
            RedqConfig(subset_size=11)
        with pytest.raises(ConfigError):
            RedqConfig(subset_size=0)

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError):
            RedqConfig.from_dict({"n_critics": 4, "subset_size": 2, "bogus": 1})

    def test_round_trip(self):
        cfg = RedqConfig.from_dict({"n_critics": 4, "subset_size": 2, "batch_size": 8,
                                    "exploration_steps": 16})
        assert cfg.n_critics == 4 and cfg.subset_size == 2


def small_cfg(selection="dns", **kw):
    base = dict(
        n_critics=4,
        subset_size=2,
        target_subset_size=2,
        batch_size=16,
        hidden_sizes=(16, 16),
        exploration_steps=64,
        selection=selection,
    )
    base.update(kw)
    return RedqConfig(**base)


class TestComputeTarget:
    def _setup(self, seed=0):
        cfg = small_cfg()
        rng = make_rng(seed)
        policy = SquashedGaussianPolicy(2, 1, cfg.hidden_sizes, cfg.activation, rng)
        net, target = make_critic_ensemble(cfg, 2, 1, rng)
        batch = Batch(
            states=rng.normal(size=(8, 2)),
            actions=rng.normal(size=(8, 1)),
            rewards=rng.normal(size=8),
            next_states=rng.normal(size=(8, 2)),
            dones=np.zeros(8),
        )
        return cfg, rng, policy, net, target, batch

    def test_zero_discount_returns_reward(self):
        cfg, rng, policy, net, target, batch = self._setup()
        y = compute_target(batch, target, policy, np.array([0, 1]), 0.0, cfg.entropy_alpha, rng)
        np.testing.assert_allclose(y, batch.rewards, atol=1e-12)

    def test_known_min_arithmetic(self):
        cfg, rng, policy, net, target, batch = self._setup()
        # force constant target critics: zero weights, bias 2.0 and 3.0
        for w in target.weights:
            w[:] = 0.0
        for b in target.biases:
            b[:] = 0.0
        target.biases[-1][0] = 2.0
        target.biases[-1][1] = 3.0
        one = Batch(
            states=np.zeros((4, 2)),
            actions=np.zeros((4, 1)),
            rewards=np.ones(4),
            next_states=np.zeros((4, 2)),
            dones=np.zeros(4),
        )
        y = compute_target(one, target, policy, np.array([0, 1]), 0.5, 0.0, rng)
        np.testing.assert_allclose(y, 1.0 + 0.5 * 2.0, atol=1e-12)

    def test_single_member_min(self):
        cfg, rng, policy, net, target, batch = self._setup()
        y1 = compute_target(batch, target, policy, np.array([1]), 0.9, 0.0, make_rng(5))
        sa = np.concatenate(
            [batch.next_states, policy.sample(batch.next_states,
                                              make_rng(5).standard_normal((8, 1)))[0]], axis=1
        )
        q1 = target.forward(sa, members=np.array([1]))[0, :, 0]
        np.testing.assert_allclose(y1, batch.rewards + 0.9 * q1, atol=1e-12)

    def test_monotone_in_subset(self):
        cfg, rng, policy, net, target, batch = self._setup()
        y_small = compute_target(batch, target, policy, np.array([0, 1]), 0.99, 0.0, make_rng(3))
        y_big = compute_target(batch, target, policy, np.array([0, 1, 2, 3]), 0.99, 0.0, make_rng(3))
        assert np.all(y_big <= y_small + 1e-12)

    def test_done_blocks_bootstrap(self):
        cfg, rng, policy, net, target, batch = self._setup()
        done_batch = Batch(batch.states, batch.actions, batch.rewards,
                           batch.next_states, np.ones(8))
        y = compute_target(done_batch, target, policy, np.array([0]), 0.99, 0.1, rng)
        np.testing.assert_allclose(y, batch.rewards, atol=1e-12)

    def test_empty_subset_rejected(self):
        cfg, rng, policy, net, target, batch = self._setup()
        with pytest.raises(ValidationError):
            compute_target(batch, target, policy, np.array([], dtype=int), 0.9, 0.1, rng)


class TestSelectCritics:
    def test_all_mode(self):
        chosen = select_critics(None, small_cfg("all"), make_rng(0))
        np.testing.assert_array_equal(chosen, np.arange(4))

    def test_random_mode_uniformish(self):
        cfg = small_cfg("random_k")
        rng = make_rng(1)
        counts = np.zeros(4)
        for _ in range(2000):
            chosen = select_critics(None, cfg, rng)
            assert len(chosen) == 2
            counts[chosen] += 1
        freq = counts / counts.sum()
        np.testing.assert_allclose(freq, 0.25, atol=0.02)

    def test_dns_identical_critics_falls_back(self, caplog):
        cfg = small_cfg("dns")
        q = np.tile(np.array([1.0, 2.0, 3.0, 4.0]), (4, 1))  # rank-1 similarity
        stats = {}
        with caplog.at_level("WARNING"):
            chosen = select_critics(q, cfg, make_rng(2), stats)
        assert len(chosen) == 2
        assert stats["dpp_fallbacks"] == 1
        assert any("fallback" in rec.message for rec in caplog.records)

    def test_dns_near_identity_similarity_near_uniform(self):
        cfg = small_cfg("dns")
        rng = make_rng(3)
        base = make_rng(17).normal(size=(4, 64))  # uncorrelated members
        counts: dict = {}
        for _ in range(4000):
            chosen = tuple(select_critics(base, cfg, rng))
            counts[chosen] = counts.get(chosen, 0) + 1
        freqs = np.array([counts.get(s, 0) / 4000 for s in counts])
        assert len(counts) == 6
        np.testing.assert_allclose(freqs, 1 / 6, atol=0.035)

    def test_dns_prefers_diverse_members(self):
        cfg = small_cfg("dns", n_critics=3, subset_size=2)
        rng = make_rng(4)
        shared = make_rng(5).normal(size=64)
        indep = make_rng(6).normal(size=64)
        q = np.stack([shared, shared + 0.05 * make_rng(7).normal(size=64), indep])
        pair_counts = np.zeros((3, 3))
        for _ in range(3000):
            i, j = select_critics(q, cfg, rng)
            pair_counts[i, j] += 1
        # the near-duplicate pair (0, 1) should be selected least often
        assert pair_counts[0, 1] < pair_counts[0, 2]
        assert pair_counts[0, 1] < pair_counts[1, 2]


class TestCriticUpdate:
    def test_perfect_critic_no_move(self):
        cfg = small_cfg()
        rng = make_rng(0)
        net, _ = make_critic_ensemble(cfg, 2, 1, rng)
        opt = Adam(net, lr=1e-3)
        sa = rng.normal(size=(8, 3))
        q = net.forward(sa)[..., 0]
        chosen = np.array([0, 2])
        before = [w.copy() for w in net.weights]
        y = q[0].copy()  # member 0 already perfect
        # train only member 0 against its own output
        critic_gradient_step(net, opt, np.array([0]), q[:1], y, None, True)
        np.testing.assert_allclose(net.weights[0][0], before[0][0], atol=1e-12)
        np.testing.assert_array_equal(net.weights[0][1], before[0][1])

    def test_single_batch_overfit(self):
        cfg = small_cfg(n_critics=2, subset_size=1)
        rng = make_rng(1)
        net, _ = make_critic_ensemble(cfg, 2, 1, rng)
        opt = Adam(net, lr=3e-3)
        sa = rng.normal(size=(16, 3))
        y = rng.normal(size=16)
        chosen = np.array([0])
        for _ in range(500):
            q = net.forward(sa, members=chosen)[..., 0]
            losses = critic_gradient_step(net, opt, chosen, q, y, None, False)
        assert losses[0] < 1e-3

    def test_only_chosen_members_move_and_charge(self):
        cfg = small_cfg()
        rng = make_rng(2)
        net, _ = make_critic_ensemble(cfg, 2, 1, rng)
        opt = Adam(net, lr=1e-2)
        ledger = FlopLedger()
        sa = rng.normal(size=(8, 3))
        q = net.forward(sa, ledger)[..., 0]
        fwd_after_fetch = ledger.forward_flops
        before = [w.copy() for w in net.weights]
        chosen = np.array([1, 3])
        y = rng.normal(size=8)
        critic_gradient_step(net, opt, chosen, q[chosen], y, ledger, True)
        assert ledger.forward_flops == fwd_after_fetch  # loss reuses the fetch
        assert ledger.backward_flops == 2 * 8 * net.bwd_flops_per_example
        for l in range(net.n_layers):
            np.testing.assert_array_equal(net.weights[l][0], before[l][0])
            np.testing.assert_array_equal(net.weights[l][2], before[l][2])
            assert np.abs(net.weights[l][1] - before[l][1]).max() > 0
            assert np.abs(net.weights[l][3] - before[l][3]).max() > 0


class TestTargetPolyak:
    def _nets(self):
        cfg = small_cfg()
        rng = make_rng(0)
        return make_critic_ensemble(cfg, 2, 1, rng)

    def test_rho_one_freezes(self):
        net, target = self._nets()
        before = [w.copy() for w in target.weights]
        target_polyak(net, target, np.arange(4), 1.0 - 1e-18)
        for b, w in zip(before, target.weights):
            np.testing.assert_allclose(b, w, atol=1e-15)

    def test_rho_zero_copies(self):
        net, target = self._nets()
        target_polyak(net, target, np.arange(4), 0.0)
        for tw, w in zip(target.weights, net.weights):
            np.testing.assert_array_equal(tw, w)

    def test_scalar_arithmetic(self):
        net, target = self._nets()
        for w in net.weights:
            w[:] = 1.0
        for tw in target.weights:
            tw[:] = 0.0
        target_polyak(net, target, np.arange(4), 0.995)
        for tw in target.weights:
            np.testing.assert_allclose(tw, 0.005, atol=1e-15)

    def test_only_chosen_targets_move(self):
        net, target = self._nets()
        for w in net.weights:
            w += 1.0  # diverge from the freshly cloned targets
        before = [w.copy() for w in target.weights]
        target_polyak(net, target, np.array([1]), 0.5)
        for l in range(net.n_layers):
            np.testing.assert_array_equal(target.weights[l][0], before[l][0])
            assert np.abs(target.weights[l][1] - before[l][1]).max() > 0


class TestPolicyUpdate:
    def test_constant_critics_zero_q_gradient(self):
        cfg = small_cfg()
        rng = make_rng(0)
        policy = SquashedGaussianPolicy(2, 1, (8,), "relu", rng)
        net, _ = make_critic_ensemble(cfg, 2, 1, rng)
        for w in net.weights:
            w[:] = 0.0
        for b in net.biases:
            b[:] = 0.0
        states = rng.normal(size=(6, 2))
        noise = rng.standard_normal((6, 1))
        loss, grad_out = policy_loss_and_output_grad(policy, net, states, noise, 0.0, None)
        np.testing.assert_allclose(grad_out, 0.0, atol=1e-12)

    def test_entropy_raises_log_std(self):
        cfg = small_cfg()
        rng = make_rng(1)
        policy = SquashedGaussianPolicy(2, 1, (8,), "relu", rng)
        net, _ = make_critic_ensemble(cfg, 2, 1, rng)
        for w in net.weights:
            w[:] = 0.0
        for b in net.biases:
            b[:] = 0.0
        opt = Adam(policy.net, lr=1e-2)
        states = make_rng(2).normal(size=(32, 2))

        def mean_log_std():
            out = policy.net.forward(states)
            return float(np.mean(out[:, 1]))

        before = mean_log_std()
        for _ in range(50):
            policy_update(policy, opt, net, states, 0.2, make_rng(3))
        assert mean_log_std() > before

    def test_gradient_check_full_policy_loss(self):
        cfg = small_cfg()
        rng = make_rng(4)
        policy = SquashedGaussianPolicy(2, 1, (8, 8), "tanh", rng)
        net, _ = make_critic_ensemble(cfg, 2, 1, rng)
        states = rng.normal(size=(5, 2))
        noise = rng.standard_normal((5, 1))
        alpha = 0.1

        loss, grad_out = policy_loss_and_output_grad(policy, net, states, noise, alpha, None)
        analytic = policy.net.backward(grad_out)

        def loss_fn():
            value, _ = policy_loss_and_output_grad(policy, net, states, noise, alpha, None)
            return value

        from dppsel.nn import finite_difference_grads

        fd_w, fd_b = finite_difference_grads(loss_fn, policy.net, h=1e-5)
        for got, want in zip(analytic.weights + analytic.biases, fd_w + fd_b):
            scale = max(1e-6, float(np.abs(want).max()))
            assert np.abs(got - want).max() / scale <= 1e-3


class TestTabular:
    def test_zero_indicator_freezes(self):
        ens = TabularEnsemble(3, 2, 2, 0.1)
        ens.step(0, 1, 5.0, np.zeros(3))
        assert np.all(ens.q == 0.0)

    def test_single_update_arithmetic(self):
        ens = TabularEnsemble(2, 1, 1, 0.1)
        ens.step(0, 0, 1.0, np.array([1.0, 0.0]))
        assert ens.q[0, 0, 0] == pytest.approx(0.1)
        assert ens.q[1, 0, 0] == 0.0

    def test_geometric_convergence(self):
        ens = TabularEnsemble(1, 1, 1, 0.25)
        for t in range(1, 30):
            ens.step(0, 0, 1.0, np.ones(1))
            assert ens.q[0, 0, 0] == pytest.approx(1.0 - 0.75**t)

    def test_indicator_validation(self):
        ens = TabularEnsemble(2, 1, 1, 0.1)
        with pytest.raises(ValidationError):
            ens.step(0, 0, 1.0, np.array([0.5, 1.0]))


class TestTrainRun:
    def test_reproducible_metrics(self):
        cfg = small_cfg(selection="dns")
        a = train_run(cfg, seed=7, total_steps=500, cadence=50)
        b = train_run(cfg, seed=7, total_steps=500, cadence=50)
        assert metrics_csv(a) == metrics_csv(b)
        assert a.final_return == b.final_return

    def test_selected_indices_match_mode(self):
        for sel, count in (("dns", 2), ("random_k", 2), ("all", 4)):
            cfg = small_cfg(selection=sel)
            res = train_run(cfg, seed=1, total_steps=200, cadence=100)
            last = res.rows[-1]
            assert last.selected is not None
            assert len(last.selected) == count

    def test_k_equals_n_matches_all_in_ledger(self):
        dns_full = small_cfg(selection="dns", subset_size=4)
        allc = small_cfg(selection="all", subset_size=4)
        r_dns = train_run(dns_full, seed=3, total_steps=300, cadence=100)
        r_all = train_run(allc, seed=3, total_steps=300, cadence=100)
        assert r_dns.critic_ledger.snapshot() == r_all.critic_ledger.snapshot()
        assert r_dns.policy_ledger.snapshot() == r_all.policy_ledger.snapshot()

    def test_backward_ratio_half_for_critics(self):
        half = small_cfg(selection="random_k", subset_size=2)
        full = small_cfg(selection="all")
        r_half = train_run(half, seed=5, total_steps=300, cadence=100)
        r_full = train_run(full, seed=5, total_steps=300, cadence=100)
        assert r_half.critic_ledger.backward_flops * 2 == r_full.critic_ledger.backward_flops
        assert r_half.policy_ledger.backward_flops == r_full.policy_ledger.backward_flops

    def test_csv_shape_and_header(self):
        cfg = small_cfg()
        res = train_run(cfg, seed=2, total_steps=300, cadence=100)
        text = metrics_csv(res)
        lines = text.strip().split("\n")
        assert lines[0].startswith("step,episode_return,mean_q_0")
        assert lines[0].endswith("cross_critic_q_std,mean_pairwise_cka,fwd_flops,bwd_flops,selected_indices")
        assert len(lines) == 1 + 3
        assert len(lines[1].split(",")) == 2 + 4 + 5
