"""Stochastic Mountain Car with truncated Gaussian dynamics.

The transition is a pure function of ``(p, v, f, z_v, z_p)``; callers draw
the standard normals themselves, which makes common-random-number
comparisons and exact replay straightforward.  All functions accept NumPy
arrays and operate elementwise.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import rng as rngmod
from .errors import DataError, DomainError
from .fqi import Dataset

SLOPE_MARGIN = 1e-9


@dataclass(frozen=True)
class MCParams:
    p_min: float = -1.2
    p_max: float = 0.6
    v_min: float = -0.07
    v_max: float = 0.07
    f_min: float = -1.0
    f_max: float = 1.0
    sigma_v: float = 0.01
    sigma_p: float = 0.0025
    force_coef: float = 0.0015
    gravity_coef: float = 0.0025
    barrier_coef: float = 0.025
    p_goal: float = 0.45
    force_penalty: float = 0.1
    goal_bonus: float = 100.0
    gamma: float = 0.97
    p0_low: float = -0.6
    p0_high: float = -0.4

    def __post_init__(self):
        if not (self.p_min < self.p_max and self.v_min < self.v_max and self.f_min < self.f_max):
            raise DomainError("box bounds must satisfy min < max")
        if self.sigma_v < 0 or self.sigma_p < 0:
            raise DomainError("noise scales must be nonnegative")
        if not 0.0 <= self.gamma < 1.0:
            raise DomainError("gamma must lie in [0, 1)")

    def as_dict(self) -> dict:
        return asdict(self)


DEFAULT = MCParams()


def _interior(p, prm: MCParams) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p)) or np.any(p <= prm.p_min) or np.any(p >= prm.p_max):
        raise DomainError("mountain height is singular at and beyond the position bounds")
    return p


def mountain_height(p, prm: MCParams = DEFAULT):
    """``m(p) = sin(3p)/3 + c / ((p_max - p)(p - p_min))``."""
    p = _interior(p, prm)
    return np.sin(3.0 * p) / 3.0 + prm.barrier_coef / ((prm.p_max - p) * (p - prm.p_min))


def mountain_slope(p, prm: MCParams = DEFAULT):
    """Derivative of ``mountain_height``."""
    p = _interior(p, prm)
    den = (prm.p_max - p) * (p - prm.p_min)
    return np.cos(3.0 * p) - prm.barrier_coef * (prm.p_max + prm.p_min - 2.0 * p) / den**2


def _check_state(p, v, prm: MCParams):
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(v))):
        raise DomainError("state must be finite")
    if np.any(p < prm.p_min) or np.any(p > prm.p_max) or np.any(v < prm.v_min) or np.any(v > prm.v_max):
        raise DomainError("state outside the box")
    return p, v


def _check_force(f, prm: MCParams):
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)) or np.any(f < prm.f_min) or np.any(f > prm.f_max):
        raise DomainError("force outside its bounds")
    return f


def _step_unchecked(p, v, f, z_v, z_p, prm: MCParams):
    ps = np.clip(p, prm.p_min + SLOPE_MARGIN, prm.p_max - SLOPE_MARGIN)
    den = (prm.p_max - ps) * (ps - prm.p_min)
    slope = np.cos(3.0 * ps) - prm.barrier_coef * (prm.p_max + prm.p_min - 2.0 * ps) / den**2
    v_new = np.clip(v + prm.force_coef * f - prm.gravity_coef * slope + prm.sigma_v * z_v,
                    prm.v_min, prm.v_max)
    p_new = np.clip(p + v_new + prm.sigma_p * z_p, prm.p_min, prm.p_max)
    return p_new, v_new


def step(p, v, f, z_v, z_p, prm: MCParams = DEFAULT):
    """One transition; returns ``(p', v')``.

    The slope is evaluated at ``p`` pulled ``1e-9`` inside the bounds since
    truncation can leave the car exactly on a wall.
    """
    p, v = _check_state(p, v, prm)
    f = _check_force(f, prm)
    return _step_unchecked(p, v, f, np.asarray(z_v, float), np.asarray(z_p, float), prm)


def reward(p, f, prm: MCParams = DEFAULT):
    """``-penalty f^2 + bonus * max(0, p - p_goal)^2``."""
    p = np.asarray(p, dtype=float)
    f = np.asarray(f, dtype=float)
    return -prm.force_penalty * f * f + prm.goal_bonus * np.maximum(0.0, p - prm.p_goal) ** 2


def sample_offline_dataset(n: int, seed: int | np.random.Generator,
                           prm: MCParams = DEFAULT) -> Dataset:
    """``n`` uniform draws from the state-action box with one noisy transition each."""
    if n < 1:
        raise DataError("dataset size must be positive")
    g = seed if isinstance(seed, np.random.Generator) else rngmod.stream(seed, rngmod.DATASET)
    p = g.uniform(prm.p_min, prm.p_max, n)
    v = g.uniform(prm.v_min, prm.v_max, n)
    f = g.uniform(prm.f_min, prm.f_max, n)
    z = g.standard_normal((n, 2))
    p2, v2 = _step_unchecked(p, v, f, z[:, 0], z[:, 1], prm)
    return Dataset(states=np.column_stack([p, v]), actions=f, rewards=reward(p, f, prm),
                   next_states=np.column_stack([p2, v2]))


def sample_initial_position(seed: int | np.random.Generator, size=None, prm: MCParams = DEFAULT):
    g = seed if isinstance(seed, np.random.Generator) else rngmod.stream(seed, rngmod.EVALUATION)
    return g.uniform(prm.p0_low, prm.p0_high, size)


Policy = Callable[[np.ndarray, np.ndarray], np.ndarray]
RewardFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def simulate_returns(policy: Policy, p0, noise: np.ndarray, gamma: float,
                     prm: MCParams = DEFAULT, reward_fn: RewardFn | None = None) -> np.ndarray:
    """Discounted returns of trajectories started at ``(p0, 0)``.

    ``noise`` has shape ``(m, steps, 2)`` holding ``(z_v, z_p)`` per step.
    All ``m`` trajectories advance together.
    """
    p = np.array(p0, dtype=float).reshape(-1)
    noise = np.asarray(noise, dtype=float)
    m, steps = noise.shape[0], noise.shape[1]
    if p.shape[0] != m:
        raise DataError("one initial position per noise row is required")
    _check_state(p, 0.0, prm)
    v = np.zeros(m)
    rew = reward_fn if reward_fn is not None else (lambda pp, ff: reward(pp, ff, prm))
    total = np.zeros(m)
    disc = 1.0
    for t in range(steps):
        f = np.clip(np.asarray(policy(p, v), dtype=float), prm.f_min, prm.f_max)
        total += disc * rew(p, f)
        p, v = _step_unchecked(p, v, f, noise[:, t, 0], noise[:, t, 1], prm)
        disc *= gamma
    return total


def rollout(policy: Policy, p0: float, steps: int, gamma: float,
            seed: int | np.random.Generator, prm: MCParams = DEFAULT,
            reward_fn: RewardFn | None = None) -> float:
    """Discounted return of a single trajectory from ``(p0, 0)``."""
    if steps < 0:
        raise DomainError("steps must be nonnegative")
    g = seed if isinstance(seed, np.random.Generator) else rngmod.stream(seed, rngmod.EVALUATION)
    noise = g.standard_normal((1, steps, 2))
    return float(simulate_returns(policy, [p0], noise, gamma, prm, reward_fn)[0])
