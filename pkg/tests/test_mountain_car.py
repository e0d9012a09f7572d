import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fastrate import rng as rngmod
from fastrate.errors import DataError, DomainError
from fastrate.mountain_car import (DEFAULT, MCParams, mountain_height, mountain_slope, reward, rollout,
                                   sample_initial_position, sample_offline_dataset, simulate_returns, step)


class TestMountain:
    def test_height_at_origin(self):
        assert mountain_height(0.0) == pytest.approx(0.025 / 0.72, rel=1e-15)

    def test_slope_at_origin(self):
        # cos(0) + 0.025 * 0.6 / 0.72^2
        assert mountain_slope(0.0) == pytest.approx(1.0 + 0.015 / 0.5184, rel=1e-15)

    def test_slope_matches_central_difference(self):
        p = np.linspace(-1.19, 0.59, 2001)
        h = 1e-6
        fd = (mountain_height(p + h) - mountain_height(p - h)) / (2 * h)
        d = mountain_slope(p)
        assert np.all(np.abs(d - fd) <= 1e-6 * (1 + np.abs(d)))

    @pytest.mark.parametrize("p", [-1.2, 0.6, -1.3, 0.7, np.nan])
    def test_walls_are_errors(self, p):
        with pytest.raises(DomainError):
            mountain_height(p)
        with pytest.raises(DomainError):
            mountain_slope(p)


class TestStep:
    def test_noise_free_step_from_origin(self):
        p2, v2 = step(0.0, 0.0, 1.0, 0.0, 0.0)
        expected_v = 0.0015 - 0.0025 * (1.0 + 0.015 / 0.5184)
        assert v2 == pytest.approx(expected_v, rel=1e-14)
        assert p2 == pytest.approx(expected_v, rel=1e-14)

    def test_noise_enters_linearly(self):
        p0, v0 = step(-0.5, 0.01, 0.3, 0.0, 0.0)
        p1, v1 = step(-0.5, 0.01, 0.3, 0.5, -0.4)
        assert v1 - v0 == pytest.approx(0.5 * 0.01, rel=1e-12)
        assert p1 - p0 == pytest.approx(0.5 * 0.01 - 0.4 * 0.0025, rel=1e-12)

    def test_velocity_and_position_are_clipped(self):
        p, v = step(0.55, 0.07, 1.0, 50.0, 50.0)
        assert v == 0.07 and p == 0.6
        p, v = step(-1.15, -0.07, -1.0, -50.0, -50.0)
        assert v == -0.07 and p == -1.2

    def test_barrier_pushes_back_near_the_wall(self):
        _, v = step(0.59, 0.07, 1.0, 0.0, 0.0)
        assert v == -0.07

    def test_step_from_the_wall_is_finite(self):
        p, v = step(0.6, 0.0, 0.0, 0.0, 0.0)
        assert np.isfinite(p) and np.isfinite(v)
        p, v = step(-1.2, 0.0, 0.0, 0.0, 0.0)
        assert np.isfinite(p) and np.isfinite(v)

    def test_input_checks(self):
        with pytest.raises(DomainError):
            step(0.0, 0.08, 0.0, 0.0, 0.0)
        with pytest.raises(DomainError):
            step(0.0, 0.0, 1.5, 0.0, 0.0)
        with pytest.raises(DomainError):
            step(0.61, 0.0, 0.0, 0.0, 0.0)

    @given(st.floats(-1.2, 0.6), st.floats(-0.07, 0.07), st.floats(-1, 1), st.floats(-6, 6), st.floats(-6, 6))
    def test_next_state_stays_in_box(self, p, v, f, zv, zp):
        p2, v2 = step(p, v, f, zv, zp)
        assert -1.2 <= p2 <= 0.6 and -0.07 <= v2 <= 0.07


class TestReward:
    def test_values(self):
        assert reward(0.5, 1.0) == pytest.approx(-0.1 + 100 * 0.05**2, rel=1e-14)
        assert reward(0.45, 0.0) == 0.0
        assert reward(-0.5, -0.5) == pytest.approx(-0.025)

    def test_custom_params(self):
        prm = MCParams(force_penalty=0.0, goal_bonus=1.0)
        assert reward(0.55, 1.0, prm) == pytest.approx(0.01)


class TestSampling:
    def test_dataset_shape_and_box(self):
        d = sample_offline_dataset(500, 1)
        assert d.n == 500 and d.states.shape == (500, 2) and d.next_states.shape == (500, 2)
        assert d.states[:, 0].min() >= -1.2 and d.states[:, 0].max() <= 0.6
        assert np.abs(d.actions).max() <= 1.0
        np.testing.assert_allclose(d.rewards, reward(d.states[:, 0], d.actions))

    def test_next_states_follow_the_dynamics(self):
        g = rngmod.stream(5, rngmod.DATASET)
        d = sample_offline_dataset(50, rngmod.stream(5, rngmod.DATASET))
        p = g.uniform(-1.2, 0.6, 50)
        v = g.uniform(-0.07, 0.07, 50)
        f = g.uniform(-1, 1, 50)
        z = g.standard_normal((50, 2))
        p2, v2 = step(p, v, f, z[:, 0], z[:, 1])
        np.testing.assert_array_equal(d.next_states, np.column_stack([p2, v2]))

    def test_same_seed_same_data(self):
        a = sample_offline_dataset(100, 9)
        b = sample_offline_dataset(100, 9)
        c = sample_offline_dataset(100, 10)
        np.testing.assert_array_equal(a.next_states, b.next_states)
        assert not np.array_equal(a.states, c.states)

    def test_size_must_be_positive(self):
        with pytest.raises(DataError):
            sample_offline_dataset(0, 0)

    def test_initial_positions(self):
        p = sample_initial_position(3, 1000)
        assert p.min() >= -0.6 and p.max() <= -0.4


class TestSimulation:
    def test_vectorized_matches_scalar_loop(self, rng):
        noise = rng.standard_normal((3, 40, 2))
        p0 = np.array([-0.55, -0.5, -0.45])

        def policy(p, v):
            return np.sign(v) * 0.8

        got = simulate_returns(policy, p0, noise, 0.97)
        for i in range(3):
            p, v, ret = p0[i], 0.0, 0.0
            for t in range(40):
                f = float(np.sign(v) * 0.8)
                ret += 0.97**t * float(reward(p, f))
                p, v = (float(x) for x in step(p, v, f, noise[i, t, 0], noise[i, t, 1]))
            assert got[i] == pytest.approx(ret, rel=1e-13, abs=1e-15)

    def test_policy_output_clipped(self):
        z = np.zeros((1, 1, 2))
        ret = simulate_returns(lambda p, v: np.full_like(p, 5.0), [-0.5], z, 0.9)
        assert ret[0] == pytest.approx(-0.1)

    def test_zero_policy_costs_nothing_near_valley(self):
        prm = MCParams(sigma_v=0.0, sigma_p=0.0)
        ret = rollout(lambda p, v: np.zeros_like(p), -0.5, 200, 0.97, 0, prm)
        assert ret == 0.0

    def test_custom_reward_function(self):
        z = np.zeros((2, 3, 2))
        ret = simulate_returns(lambda p, v: np.zeros_like(p), [-0.5, -0.5], z, 0.5,
                               reward_fn=lambda p, f: np.ones_like(p))
        np.testing.assert_allclose(ret, 1 + 0.5 + 0.25)

    def test_noise_shape_checked(self):
        with pytest.raises(DataError):
            simulate_returns(lambda p, v: p * 0, [-0.5, -0.5], np.zeros((1, 3, 2)), 0.9)

    def test_default_params(self):
        assert DEFAULT.gamma == 0.97
        assert math.isclose(DEFAULT.sigma_v, 0.01) and math.isclose(DEFAULT.sigma_p, 0.0025)
