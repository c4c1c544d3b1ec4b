"""Dueling double DQL harness, replay memory, MLP baseline and toy environments."""

import numpy as np
import pytest
from scipy import stats

from neurofuzzy import ConfigError, EnvironmentContractError, InputError, NeuroFuzzyNetwork, UsageError
from neurofuzzy.rl import (
    ACTIVATIONS,
    ENVIRONMENTS,
    MLP,
    DuelHeads,
    ExplorationSchedule,
    ReplayBuffer,
    RLConfig,
    Transition,
    act,
    aggregate,
    ddql_update,
    double_dqn_targets,
    evaluate,
    make_env,
    oracle_scores,
    q_values,
    run_episode,
    slope,
    train_loop,
)
from neurofuzzy.rl.agent import parameter_hash, random_scores
from neurofuzzy.training import AdamState, adam_step, check_gradients


def nfn_heads(seed=42, n_actions=3, obs_dim=2, **kw):
    cfg = RLConfig(n_rules=6, **kw)
    rng = np.random.default_rng(seed)
    return DuelHeads.build(cfg, obs_dim, n_actions, np.zeros(obs_dim), np.ones(obs_dim), rng), rng


class TestAggregation:
    def test_constant_advantage(self):
        q = aggregate(np.array([[1.5]]), np.array([[4.0, 4.0, 4.0]]))
        np.testing.assert_allclose(q, [[1.5, 1.5, 1.5]])

    def test_mean_centered(self):
        rng = np.random.default_rng(42)
        v, a = rng.normal(size=(10, 1)), rng.normal(size=(10, 4))
        np.testing.assert_allclose((aggregate(v, a) - v).mean(axis=1), 0.0, atol=1e-14)

    def test_shift_invariance(self):
        rng = np.random.default_rng(42)
        v, a = rng.normal(size=(10, 1)), rng.normal(size=(10, 4))
        np.testing.assert_array_equal(aggregate(v, a).argmax(axis=1), aggregate(v, a + 7.0).argmax(axis=1))

    def test_heads_agree_with_aggregate(self):
        heads, rng = nfn_heads()
        s = rng.uniform(size=(5, 2))
        v = heads.online["value"](s, evaluate=True)
        a = heads.online["advantage"](s, evaluate=True)
        np.testing.assert_allclose(heads.q_values(s), aggregate(v, a), rtol=1e-14)
        np.testing.assert_allclose(q_values(heads, s[0]), aggregate(v, a)[0], rtol=1e-14)


class TestExploration:
    def test_uniform_at_rate_one(self):
        heads, rng = nfn_heads()
        s = np.array([0.3, 0.6])
        counts = np.bincount([act(heads, s, 1.0, rng) for _ in range(100_000)], minlength=3)
        assert stats.chisquare(counts).pvalue > 1e-3

    def test_greedy_at_rate_zero(self):
        heads, rng = nfn_heads()
        s = np.array([0.3, 0.6])
        best = int(np.argmax(q_values(heads, s)))
        assert {act(heads, s, 0.0, rng) for _ in range(50)} == {best}
        assert {act(heads, s, 1.0, rng, evaluate=True) for _ in range(50)} == {best}

    def test_decay_formula(self):
        schedule = ExplorationSchedule()
        for k in range(1, 30001):
            schedule.step()
            if k in (1, 100, 5000, 23025, 23026, 30000):
                assert schedule.rate == pytest.approx(max(0.1, 0.9999**k), rel=1e-9)
                assert schedule.rate == pytest.approx(ExplorationSchedule.after(k), rel=1e-9)
        assert schedule.rate == 0.1


class TestDoubleDQN:
    def test_online_argmax_target_value(self):
        q_online = np.array([[1.0, 5.0, 2.0], [3.0, 0.0, 0.0]])
        q_target = np.array([[9.0, -1.0, 4.0], [2.0, 8.0, 8.0]])
        y = double_dqn_targets(q_online, q_target, [1.0, 0.5], [False, False], 0.9)
        # plain max over the target table would give 1 + 0.9*9 and 0.5 + 0.9*8
        np.testing.assert_allclose(y, [1.0 + 0.9 * -1.0, 0.5 + 0.9 * 2.0])

    def test_terminal_and_zero_gamma(self):
        q = np.array([[1.0, 2.0]])
        assert double_dqn_targets(q, q + 5, [0.25], [True], 0.9)[0] == 0.25
        assert double_dqn_targets(q, q + 5, [0.25], [False], 0.0)[0] == 0.25

    def test_gradient_only_through_taken_action(self):
        heads, rng = nfn_heads()
        s = rng.uniform(size=(4, 2))
        batch = (s, np.array([0, 1, 2, 1]), rng.normal(size=4), rng.uniform(size=(4, 2)), np.zeros(4, bool))
        loss, grads, _ = ddql_update(heads, batch, 0.9, rng)
        q = heads.q_values(s)
        y = double_dqn_targets(heads.q_values(batch[3]), heads.q_values(batch[3], "target"), batch[2], batch[4], 0.9)
        assert loss == pytest.approx(((q[np.arange(4), batch[1]] - y) ** 2).mean(), rel=1e-12)
        # every action has zero-mean advantage gradient per observation
        assert set(grads) == {"value", "advantage"}

    def test_empty_batch(self):
        heads, rng = nfn_heads()
        with pytest.raises(InputError):
            ddql_update(heads, (np.zeros((0, 2)), [], [], np.zeros((0, 2)), []), 0.9, rng)

    def test_two_state_chain_value_iteration(self):
        """Learned Q on a deterministic 2-state chain matches value iteration within 1e-3."""
        gamma = 0.5
        # next_state[s][a], reward[s][a]; state s is observed as the scalar s
        nxt = np.array([[0, 1], [1, 0]])
        rew = np.array([[0.0, 1.0], [2.0, -1.0]])
        q_star = np.zeros((2, 2))
        for _ in range(200):
            q_star = rew + gamma * q_star.max(axis=1)[nxt]
        transitions = [Transition(np.array([float(s)]), a, rew[s, a], np.array([float(nxt[s, a])]), False)
                       for s in (0, 1) for a in (0, 1)]
        heads, rng = nfn_heads(n_actions=2, obs_dim=1, n_terms=2)
        opts = {k: AdamState(lr=1e-2) for k in heads.online}
        for step in range(1, 4001):
            _, grads, _ = ddql_update(heads, transitions, gamma, rng)
            for k, net in heads.online.items():
                adam_step(net, grads[k], opts[k])
            if step % 50 == 0:
                heads.sync()
        learned = heads.q_values(np.array([[0.0], [1.0]]))
        np.testing.assert_allclose(learned, q_star, atol=1e-3)


class TestTargetSync:
    def test_hashes(self):
        heads, rng = nfn_heads()
        assert heads.target_hash() == heads.online_hash() == heads.synced_hash
        s = rng.uniform(size=(8, 2))
        batch = (s, rng.integers(0, 3, 8), rng.normal(size=8), s[::-1], np.zeros(8, bool))
        _, grads, _ = ddql_update(heads, batch, 0.9, rng)
        opt = AdamState(lr=1e-2)
        adam_step(heads.online["value"], grads["value"], opt)
        assert heads.target_hash() == heads.synced_hash != heads.online_hash()
        heads.sync()
        assert heads.target_hash() == heads.online_hash()

    def test_copies_are_independent(self):
        heads, _ = nfn_heads()
        heads.online["value"].head.b[:] += 1.0
        assert heads.target_hash() != heads.online_hash()


class TestReplay:
    def transition(self, k):
        return Transition(np.array([k, k]), k % 3, float(k), np.array([k + 1, k + 1]), False)

    def test_fifo_eviction(self):
        buf = ReplayBuffer(3, 2)
        for k in range(5):
            buf.push(self.transition(k))
            assert len(buf) <= 3
        assert [t.reward for t in buf.ordered()] == [2.0, 3.0, 4.0]

    def test_sample_shapes(self):
        buf = ReplayBuffer(10, 2)
        for k in range(4):
            buf.push(self.transition(k))
        s, a, r, s2, d = buf.sample(np.random.default_rng(42), 16)
        assert s.shape == (16, 2) and set(r) <= {0.0, 1.0, 2.0, 3.0}

    def test_rejects_non_finite(self):
        buf = ReplayBuffer(2, 2)
        with pytest.raises(InputError):
            buf.push(Transition(np.array([np.nan, 0.0]), 0, 0.0, np.zeros(2), False))
        with pytest.raises(InputError):
            buf.sample(np.random.default_rng(0), 1)


class NanEnv:
    obs_dim, n_actions, name = 1, 2, "nan"
    obs_low, obs_high = np.zeros(1), np.ones(1)

    def reset(self, seed):
        self.t = 0
        return np.zeros(1)

    def step(self, action):
        self.t += 1
        return np.array([np.nan if self.t == 3 else 0.0]), 0.0, False


class TestEpisodes:
    def test_slope(self):
        assert slope([1, 2, 3, 4]) == pytest.approx(1.0)
        assert slope([5.0]) == 0.0

    def test_nan_observation(self):
        with pytest.raises(EnvironmentContractError):
            run_episode(NanEnv(), lambda s: 0, seed=0)

    @pytest.mark.parametrize("name", sorted(ENVIRONMENTS))
    def test_environment_contract(self, name):
        env = make_env(name)
        a = [run_episode(env, lambda s: 0, seed) for seed in range(3)]
        b = [run_episode(env, lambda s: 0, seed) for seed in range(3)]
        assert a == b
        obs = env.reset(4)
        assert obs.shape == (env.obs_dim,)
        assert (obs >= env.obs_low - 1e-12).all() and (obs <= env.obs_high + 1e-12).all()

    @pytest.mark.parametrize("name", sorted(ENVIRONMENTS))
    def test_oracle_beats_random(self, name):
        env = make_env(name)
        seeds = range(10)
        oracle = oracle_scores(env, seeds).mean()
        rand = random_scores(env, seeds, np.random.default_rng(42)).mean()
        assert oracle > rand

    def test_random_baseline_reproducible(self):
        env = make_env("track-and-shoot")
        a = random_scores(env, range(5), np.random.default_rng(9))
        b = random_scores(env, range(5), np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_unknown_env(self):
        with pytest.raises(ConfigError):
            make_env("doom")

    def test_evaluation_is_pure(self):
        heads, rng = nfn_heads(estimator="STGE", retain_batches=5)
        s = rng.uniform(size=(8, 2))
        ddql_update(heads, (s, rng.integers(0, 3, 8), rng.normal(size=8), s, np.zeros(8, bool)), 0.9, rng)
        env = make_env("track-and-shoot")
        heads4, _ = nfn_heads(obs_dim=env.obs_dim, estimator="STGE", retain_batches=5)
        for net in heads4.online.values():
            net.select(rng)
        before = (heads4.online_hash(), heads4.target_hash())
        noise = {k: (n.rules.noise.copy(), n.rules.noise_age, n.layer.version) for k, n in heads4.online.items()}
        evaluate(env, heads4, range(3))
        assert (heads4.online_hash(), heads4.target_hash()) == before
        for k, net in heads4.online.items():
            np.testing.assert_array_equal(net.rules.noise, noise[k][0])
            assert net.rules.noise_age == noise[k][1] and net.layer.version == noise[k][2]

    def test_short_run_logs(self, tmp_path):
        cfg = RLConfig(steps=200, epoch_steps=100, eval_episodes=2, n_rules=4, memory=500)
        log = tmp_path / "episodes.jsonl"
        metrics = tmp_path / "metrics.jsonl"
        report = train_loop(cfg, episode_log=log, metrics_path=metrics)
        lines = log.read_text().splitlines()
        assert len(lines) == len(report.epochs) == 2
        assert set(__import__("json").loads(lines[0])) == {"epoch", "mean", "sd", "slope"}
        assert report.env_steps == 200 and report.train_steps == 200 - cfg.batch_size + 1
        assert len(metrics.read_text().splitlines()) == report.train_steps


class TestMLP:
    @pytest.mark.parametrize("name", sorted(ACTIVATIONS))
    def test_gradients(self, name):
        rng = np.random.default_rng(42)
        net = MLP(3, 2, hidden=5, activation=name, rng=rng)
        result = check_gradients(net, rng.normal(size=(4, 3)), relaxed=False)
        assert result.passed(1e-4), result.errors

    def test_stale_tape(self):
        net = MLP(2, 1, hidden=4, rng=np.random.default_rng(0))
        y, tape = net.forward(np.zeros((1, 2)))
        net.enforce_constraints()
        with pytest.raises(UsageError):
            net.backward(tape, np.ones_like(y))

    def test_unknown_activation(self):
        with pytest.raises(ConfigError):
            MLP(2, 1, activation="PReLU")

    def test_round_trip(self):
        net = MLP(2, 3, hidden=4, activation="GELU", rng=np.random.default_rng(0))
        back = MLP.from_dict(net.to_dict())
        assert parameter_hash(back) == parameter_hash(net)

    def test_mlp_heads_build(self):
        cfg = RLConfig(model="mlp", hidden=8)
        heads = DuelHeads.build(cfg, 4, 3, np.zeros(4), np.ones(4), np.random.default_rng(0))
        assert isinstance(heads.online["value"], MLP)
        assert heads.q_values(np.zeros(4)).shape == (1, 3)

    def test_shared_trunk(self):
        cfg = RLConfig(shared_trunk=True, n_rules=4)
        heads = DuelHeads.build(cfg, 2, 3, np.zeros(2), np.ones(2), np.random.default_rng(0))
        assert set(heads.online) == {"trunk"} and isinstance(heads.online["trunk"], NeuroFuzzyNetwork)
        assert heads.online["trunk"].out_dim == 4
