"""Two-phase online learning: uniform exploration, then greedy play with FQI refits on doubling blocks.

Phase 1 runs ``T0`` exploration episodes and fits an initial Q-function.
Block ``k`` then plays the greedy policy of the latest fit for episodes
``T0 2^k + 1 .. T0 2^(k+1)`` and refits using only that block's episodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import mdp as M
from . import rng as rngmod
from .diagnostics import covariate_shift_norm, population_covariance
from .errors import DataError, DomainError, SingularSystemError
from .features import ArrayFeatures
from .fqi import Dataset, fqi_finite_horizon, stage_q_from_weights

EXPLORE = -1


@dataclass(frozen=True, eq=False)
class TabularEnv:
    """Episodic environment backed by a ``TabularMDP``; rewards observed with Gaussian noise."""

    mdp: M.TabularMDP
    features: ArrayFeatures
    reward_noise: float = 0.0

    def run_episodes(self, policy: np.ndarray | None, count: int, rng: np.random.Generator):
        """Simulate episodes; ``policy=None`` means uniform-random actions.

        Returns arrays ``states (count, H)``, ``actions (count, H)`` and
        ``rewards (count, H)``.
        """
        m = self.mdp
        H, S, A = m.rewards.shape
        states = np.empty((count, H), dtype=int)
        actions = np.empty((count, H), dtype=int)
        rewards = np.empty((count, H))
        s = rng.choice(S, size=count, p=m.initial_dist)
        for i in range(H):
            a = rng.integers(0, A, size=count) if policy is None else policy[i][s]
            states[:, i] = s
            actions[:, i] = a
            rewards[:, i] = m.rewards[i, s, a] + self.reward_noise * rng.standard_normal(count)
            if i < H - 1:
                u = rng.random(count)
                cdf = np.cumsum(m.transitions[i, s, a], axis=1)
                s = np.minimum((u[:, None] > cdf).sum(axis=1), S - 1)
        return states, actions, rewards

    def value(self, policy: np.ndarray | None) -> float:
        """Exact ``J``; ``None`` is the uniform-random policy."""
        if policy is not None:
            return M.policy_value(self.mdp, policy)
        m = self.mdp
        H = m.horizon
        v = m.rewards[H - 1].mean(axis=1)
        for i in range(H - 2, -1, -1):
            v = (m.rewards[i] + m.transitions[i] @ v).mean(axis=1)
        return float(m.initial_dist @ v)

    def optimal_value(self) -> float:
        return M.policy_value(self.mdp, M.greedy_policy(M.exact_optimal_q(self.mdp)))


def linear_bandit_env(rng: np.random.Generator, n_contexts: int = 8, dim: int = 3,
                      noise: float = 0.25) -> TabularEnv:
    """One-stage, two-action contextual bandit with mean reward ``<theta*, phi(x, a)>``."""
    phi = rng.standard_normal((n_contexts, 2, dim)) / np.sqrt(dim)
    theta = rng.standard_normal(dim)
    r = (phi @ theta)[None]
    P = np.zeros((0, n_contexts, 2, n_contexts))
    mdp = M.TabularMDP(P, r, rng.dirichlet(np.full(n_contexts, 5.0)))
    return TabularEnv(mdp, ArrayFeatures(phi), noise)


@dataclass(frozen=True)
class TwoPhaseConfig:
    burn_in: int
    total: int
    ridge: float = 1e-3
    split_stages: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.burn_in <= self.total:
            raise DomainError("need 1 <= T0 <= T")

    @property
    def blocks(self) -> int:
        return math.ceil(math.log2(self.total / self.burn_in)) if self.total > self.burn_in else 0


@dataclass
class RegretTrace:
    """Per-episode record; ``block[t] == -1`` marks exploration episodes."""

    block: np.ndarray
    values: np.ndarray
    optimal: float
    data_blocks: list = field(default_factory=list)
    shift_norms: list = field(default_factory=list)

    @property
    def regret(self) -> np.ndarray:
        return self.optimal - self.values

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.regret)

    def block_mean_regret(self) -> np.ndarray:
        ks = sorted(set(self.block.tolist()) - {EXPLORE})
        return np.array([self.regret[self.block == k].mean() for k in ks])


def cumulative_regret(trace_values, j_star: float):
    """``(total, running series)`` of ``sum_t (J* - J_t)``."""
    series = np.cumsum(j_star - np.asarray(trace_values, dtype=float))
    return (float(series[-1]) if series.size else 0.0), series


def fit_from_episodes(env: TabularEnv, states, actions, rewards, ridge: float, split: bool) -> np.ndarray:
    """Backward FQI on a batch of episodes; returns Q-tables ``(H, S, A)``.

    With ``split`` the episodes are divided into ``H - 1`` equal shares and
    stage ``h`` uses share ``h`` only.  The terminal stage is regressed on
    the observed final rewards of the last share.
    """
    H = env.mdp.horizon
    n = states.shape[0]
    if n == 0:
        raise DataError("no episodes to fit")
    shares = np.array_split(np.arange(n), H - 1) if (split and H > 1) else [np.arange(n)] * max(H - 1, 1)
    if any(len(idx) == 0 for idx in shares):
        raise DataError(f"{n} episodes cannot be split into {H - 1} nonempty shares")
    per_stage = []
    for i in range(H - 1):
        idx = shares[i]
        per_stage.append(Dataset(states[idx, i], actions[idx, i], rewards[idx, i], states[idx, i + 1], i + 1))
    last = shares[-1]
    terminal = Dataset(states[last, H - 1], actions[last, H - 1], rewards[last, H - 1],
                       states[last, H - 1], H)
    W = fqi_finite_horizon(per_stage, env.features, ridge, terminal_data=terminal)
    return stage_q_from_weights(env.features, W)


def run_two_phase(env: TabularEnv, cfg: TwoPhaseConfig, pilot_q: np.ndarray | None = None) -> RegretTrace:
    """Run both phases; ``pilot_q`` replaces the Phase-1 fit when given."""
    T0, T = cfg.burn_in, cfg.total
    j_star = env.optimal_value()
    values = np.empty(T)
    block = np.empty(T, dtype=int)
    rng = rngmod.stream(cfg.seed, rngmod.ONLINE, 0)
    st, ac, rw = env.run_episodes(None, T0, rng)
    values[:T0] = env.value(None)
    block[:T0] = EXPLORE
    data_blocks = [(EXPLORE, 0, T0)]
    q = fit_from_episodes(env, st, ac, rw, cfg.ridge, cfg.split_stages) if pilot_q is None else np.asarray(pilot_q)
    pi_star = M.greedy_policy(M.exact_optimal_q(env.mdp))
    sigma_star = population_covariance(env.mdp, env.features, pi_star, 1)
    shifts = []
    for k in range(cfg.blocks):
        start, stop = T0 * 2**k, min(T0 * 2 ** (k + 1), T)
        pi = M.greedy_policy(q)
        rng = rngmod.stream(cfg.seed, rngmod.ONLINE, k + 1)
        st, ac, rw = env.run_episodes(pi, stop - start, rng)
        values[start:stop] = env.value(pi)
        block[start:stop] = k
        data_blocks.append((k, start, stop))
        sig_hat = env.features.design(st[:, 0], ac[:, 0]).gram() / (stop - start)
        try:
            shifts.append(covariate_shift_norm(sigma_star, sig_hat, cfg.ridge))
        except SingularSystemError:
            shifts.append(np.inf)
        q = fit_from_episodes(env, st, ac, rw, cfg.ridge, cfg.split_stages)
    return RegretTrace(block, values, j_star, data_blocks, shifts)
