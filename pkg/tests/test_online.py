import numpy as np
import pytest

from fastrate import mdp as M
from fastrate.errors import DataError, DomainError
from fastrate.features import tabular_one_hot
from fastrate.online import (EXPLORE, TabularEnv, TwoPhaseConfig, cumulative_regret, fit_from_episodes,
                             linear_bandit_env, run_two_phase)


@pytest.fixture
def bandit():
    return linear_bandit_env(np.random.default_rng(8), n_contexts=6, dim=3, noise=0.25)


class TestEnv:
    def test_uniform_value_of_bandit(self, bandit):
        m = bandit.mdp
        assert bandit.value(None) == pytest.approx(m.initial_dist @ m.rewards[0].mean(axis=1), rel=1e-14)
        assert bandit.optimal_value() == pytest.approx(m.initial_dist @ m.rewards[0].max(axis=1), rel=1e-14)

    def test_uniform_value_matches_enumeration(self, rng):
        m = M.random_mdp(rng, 3, 2, 3)
        env = TabularEnv(m, tabular_one_hot(m))
        total = 0.0
        for a1 in range(2):
            for a2 in range(2):
                for a3 in range(2):
                    pol = np.array([[a1] * 3, [a2] * 3, [a3] * 3])
                    total += M.policy_value(m, pol)
        # state-independent uniform mixing equals the average over constant action sequences
        assert env.value(None) == pytest.approx(total / 8, rel=1e-12)

    def test_episode_frequencies(self, rng):
        m = M.random_mdp(rng, 3, 2, 3)
        env = TabularEnv(m, tabular_one_hot(m))
        pi = M.greedy_policy(M.exact_optimal_q(m))
        st, ac, rw = env.run_episodes(pi, 40000, np.random.default_rng(2))
        xi = M.occupation_measures(m, pi)
        for h in range(3):
            freq = np.bincount(st[:, h], minlength=3) / 40000
            np.testing.assert_allclose(freq, xi[h].sum(axis=1), atol=0.01)
            np.testing.assert_array_equal(ac[:, h], pi[h][st[:, h]])
        np.testing.assert_allclose(rw.sum(axis=1).mean(), M.policy_value(m, pi), atol=0.02)


class TestFit:
    def test_noise_free_bandit_is_recovered(self):
        env = linear_bandit_env(np.random.default_rng(3), noise=0.0)
        st, ac, rw = env.run_episodes(None, 200, np.random.default_rng(4))
        q = fit_from_episodes(env, st, ac, rw, 1e-10, split=True)
        np.testing.assert_allclose(q, env.mdp.rewards, atol=1e-6)

    def test_split_needs_enough_episodes(self, rng):
        m = M.random_mdp(rng, 2, 2, 4)
        env = TabularEnv(m, tabular_one_hot(m))
        st, ac, rw = env.run_episodes(None, 2, rng)
        with pytest.raises(DataError):
            fit_from_episodes(env, st, ac, rw, 1e-3, split=True)
        with pytest.raises(DataError):
            fit_from_episodes(env, st[:0], ac[:0], rw[:0], 1e-3, split=False)


class TestTwoPhase:
    def test_block_count(self):
        assert TwoPhaseConfig(20, 1280).blocks == 6
        assert TwoPhaseConfig(20, 1000).blocks == 6
        assert TwoPhaseConfig(20, 20).blocks == 0
        with pytest.raises(DomainError):
            TwoPhaseConfig(0, 10)
        with pytest.raises(DomainError):
            TwoPhaseConfig(30, 10)

    def test_block_layout(self, bandit):
        tr = run_two_phase(bandit, TwoPhaseConfig(10, 160, seed=1))
        assert np.all(tr.block[:10] == EXPLORE)
        for k, (lo, hi) in enumerate([(10, 20), (20, 40), (40, 80), (80, 160)]):
            assert np.all(tr.block[lo:hi] == k)
        assert [b[1:] for b in tr.data_blocks] == [(0, 10), (10, 20), (20, 40), (40, 80), (80, 160)]
        assert len(tr.shift_norms) == 4
        assert np.all(tr.regret >= -1e-12)

    def test_oracle_pilot_has_no_greedy_regret(self, bandit):
        tr = run_two_phase(bandit, TwoPhaseConfig(10, 20, seed=1), pilot_q=bandit.mdp.rewards)
        np.testing.assert_allclose(tr.regret[10:], 0.0, atol=1e-15)
        assert tr.regret[0] == pytest.approx(bandit.optimal_value() - bandit.value(None))

    def test_reproducible(self, bandit):
        a = run_two_phase(bandit, TwoPhaseConfig(10, 80, seed=5))
        b = run_two_phase(bandit, TwoPhaseConfig(10, 80, seed=5))
        np.testing.assert_array_equal(a.values, b.values)

    def test_cumulative_regret(self):
        total, series = cumulative_regret([1.0, 0.5, 0.75], 1.0)
        assert total == 0.75
        np.testing.assert_allclose(series, [0.0, 0.5, 0.75])
        assert cumulative_regret([], 1.0)[0] == 0.0

    def test_block_mean_regret(self, bandit):
        tr = run_two_phase(bandit, TwoPhaseConfig(10, 40, seed=2))
        np.testing.assert_allclose(tr.block_mean_regret(), [tr.regret[10:20].mean(), tr.regret[20:40].mean()])
