"""Finite-horizon tabular MDPs solved exactly by dynamic programming.

Array conventions (0-based internally):

    transitions  P[h, s, a, s']   shape (H-1, S, A, S)
    rewards      r[h, s, a]       shape (H, S, A)
    StageQ       q[h, s, a]       shape (H, S, A)
    PolicySeq    pi[h, s]         shape (H, S), integer actions

Public functions that take a stage argument use 1-based stages ``1..H``,
matching the usual mathematical notation; the conversion happens here and
nowhere else.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DomainError, StructureError

PROB_TOL = 1e-12


def _normalize_rows(p: np.ndarray, what: str) -> np.ndarray:
    if np.any(p < 0):
        if p.min() < -PROB_TOL:
            raise StructureError(f"{what} has negative entries")
        p = np.clip(p, 0.0, None)
    sums = p.sum(axis=-1, keepdims=True)
    if np.any(np.abs(sums - 1.0) > PROB_TOL):
        raise StructureError(f"{what} rows must sum to 1 within {PROB_TOL}")
    return p / sums


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Finite-horizon MDP with explicit tables; immutable after construction."""

    transitions: np.ndarray
    rewards: np.ndarray
    initial_dist: np.ndarray

    def __post_init__(self):
        P = np.array(self.transitions, dtype=float)
        r = np.array(self.rewards, dtype=float)
        mu = np.array(self.initial_dist, dtype=float)
        if r.ndim != 3 or r.shape[0] < 1:
            raise StructureError("rewards must have shape (H, S, A)")
        H, S, A = r.shape
        if P.shape != (H - 1, S, A, S):
            raise StructureError(f"transitions must have shape {(H - 1, S, A, S)}, got {P.shape}")
        if mu.shape != (S,):
            raise StructureError("initial_dist must have shape (S,)")
        if not np.all(np.isfinite(r)):
            raise StructureError("rewards must be finite")
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(mu))):
            raise StructureError("probabilities must be finite")
        if H > 1:
            P = _normalize_rows(P, "transitions")
        mu = _normalize_rows(mu, "initial_dist")
        for arr in (P, r, mu):
            arr.setflags(write=False)
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "initial_dist", mu)

    @property
    def horizon(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_states(self) -> int:
        return self.rewards.shape[1]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[2]


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, horizon: int,
               concentration: float = 1.0, reward_scale: float = 1.0) -> TabularMDP:
    """Draw transitions from a Dirichlet and rewards uniform on [0, reward_scale]."""
    alpha = np.full(n_states, concentration)
    P = rng.dirichlet(alpha, size=(horizon - 1, n_states, n_actions))
    r = reward_scale * rng.random((horizon, n_states, n_actions))
    mu = rng.dirichlet(alpha)
    return TabularMDP(P, r, mu)


def _stage(mdp: TabularMDP, h: int, last: int) -> int:
    if not 1 <= h <= last:
        raise DomainError(f"stage {h} outside 1..{last}")
    return h - 1


def _check_table(mdp: TabularMDP, f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (mdp.n_states, mdp.n_actions):
        raise StructureError(f"stage table must have shape {(mdp.n_states, mdp.n_actions)}")
    return f


def _check_q(mdp: TabularMDP, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != mdp.rewards.shape:
        raise StructureError(f"StageQ must have shape {mdp.rewards.shape}")
    return q


def _check_policy(mdp: TabularMDP, pi: np.ndarray) -> np.ndarray:
    pi = np.asarray(pi)
    if pi.shape != (mdp.horizon, mdp.n_states):
        raise StructureError(f"policy must have shape {(mdp.horizon, mdp.n_states)}")
    if not np.issubdtype(pi.dtype, np.integer):
        raise StructureError("policy entries must be integer actions")
    if pi.min() < 0 or pi.max() >= mdp.n_actions:
        raise StructureError("policy action index out of range")
    return pi


def _at_policy(f: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return f[np.arange(f.shape[0]), actions]


def apply_optimality_operator(mdp: TabularMDP, f: np.ndarray, h: int) -> np.ndarray:
    """``r_h + E[max_a' f(S', a')]`` for a stage-(h+1) table ``f``."""
    i = _stage(mdp, h, mdp.horizon - 1)
    f = _check_table(mdp, f)
    return mdp.rewards[i] + mdp.transitions[i] @ f.max(axis=1)


def apply_evaluation_operator(mdp: TabularMDP, f: np.ndarray, pi: np.ndarray, h: int) -> np.ndarray:
    """``r_h + E[f(S', pi_{h+1}(S'))]`` for a stage-(h+1) table ``f``."""
    i = _stage(mdp, h, mdp.horizon - 1)
    f = _check_table(mdp, f)
    pi = _check_policy(mdp, pi)
    return mdp.rewards[i] + mdp.transitions[i] @ _at_policy(f, pi[i + 1])


def exact_optimal_q(mdp: TabularMDP) -> np.ndarray:
    """Optimal Q-functions by backward induction from ``q_H = r_H``."""
    H = mdp.horizon
    q = np.empty(mdp.rewards.shape)
    q[H - 1] = mdp.rewards[H - 1]
    for i in range(H - 2, -1, -1):
        q[i] = mdp.rewards[i] + mdp.transitions[i] @ q[i + 1].max(axis=1)
    return q


def policy_q(mdp: TabularMDP, pi: np.ndarray) -> np.ndarray:
    """Q-functions of a deterministic policy sequence."""
    pi = _check_policy(mdp, pi)
    H = mdp.horizon
    q = np.empty(mdp.rewards.shape)
    q[H - 1] = mdp.rewards[H - 1]
    for i in range(H - 2, -1, -1):
        q[i] = mdp.rewards[i] + mdp.transitions[i] @ _at_policy(q[i + 1], pi[i + 1])
    return q


def policy_value(mdp: TabularMDP, pi: np.ndarray) -> float:
    """Expected total reward ``J(pi)`` from the initial distribution."""
    q = policy_q(mdp, pi)
    return float(mdp.initial_dist @ _at_policy(q[0], np.asarray(pi)[0]))


def greedy_policy(q: np.ndarray) -> np.ndarray:
    """Stage-wise argmax; ties go to the smallest action index."""
    q = np.asarray(q, dtype=float)
    if q.ndim != 3:
        raise StructureError("StageQ must have shape (H, S, A)")
    return np.argmax(q, axis=2)


def occupation_measures(mdp: TabularMDP, pi: np.ndarray) -> np.ndarray:
    """State-action occupation measures for every stage, shape (H, S, A)."""
    pi = _check_policy(mdp, pi)
    H, S, A = mdp.rewards.shape
    xi = np.zeros((H, S, A))
    state_dist = mdp.initial_dist.copy()
    for i in range(H):
        xi[i, np.arange(S), pi[i]] = state_dist
        if i < H - 1:
            state_dist = np.einsum("sa,sat->t", xi[i], mdp.transitions[i])
    return xi


def occupation_weights(mdp: TabularMDP, pi: np.ndarray, h: int) -> np.ndarray:
    """Distribution of ``(S_h, A_h)`` when running ``pi`` from the initial distribution."""
    i = _stage(mdp, h, mdp.horizon)
    return occupation_measures(mdp, pi)[i]


def occupancy_norm(mdp: TabularMDP, pi_star: np.ndarray, f: np.ndarray, h: int) -> float:
    """L2 norm of a stage table under the stage-h occupation measure of ``pi_star``."""
    f = _check_table(mdp, f)
    xi = occupation_weights(mdp, pi_star, h)
    return float(np.sqrt(np.sum(xi * f * f)))


def bellman_residuals(mdp: TabularMDP, f_hat: np.ndarray) -> np.ndarray:
    """``B*_h f_{h+1} - f_h`` for h = 1..H-1, shape (H-1, S, A)."""
    f_hat = _check_q(mdp, f_hat)
    H = mdp.horizon
    out = np.empty((H - 1, mdp.n_states, mdp.n_actions))
    for i in range(H - 1):
        out[i] = mdp.rewards[i] + mdp.transitions[i] @ f_hat[i + 1].max(axis=1) - f_hat[i]
    return out


def is_greedy(q: np.ndarray, pi: np.ndarray, rtol: float = 1e-12) -> bool:
    """True when ``pi`` attains the stage-wise maximum of ``q`` (ties allowed)."""
    q = np.asarray(q, dtype=float)
    chosen = np.take_along_axis(q, np.asarray(pi)[..., None], axis=2)[..., 0]
    best = q.max(axis=2)
    return bool(np.all(chosen >= best - rtol * (1.0 + np.abs(best))))


def telescope_rhs(mdp: TabularMDP, f_hat: np.ndarray, comparator: np.ndarray,
                  greedy: np.ndarray) -> float:
    """Right-hand side of the telescope bound on ``J(comparator) - J(greedy)``.

    Sums, over stages 1..H-1, the difference between the comparator's and the
    greedy policy's expected Bellman residual of ``f_hat``.  The bound holds
    when ``greedy`` is greedy for ``f_hat`` and ``f_hat[H] = r_H``.
    """
    f_hat = _check_q(mdp, f_hat)
    greedy = _check_policy(mdp, greedy)
    comparator = _check_policy(mdp, comparator)
    if not is_greedy(f_hat, greedy):
        raise ContractViolation("policy is not greedy for f_hat")
    res = bellman_residuals(mdp, f_hat)
    xi_cmp = occupation_measures(mdp, comparator)[:-1]
    xi_hat = occupation_measures(mdp, greedy)[:-1]
    return float(np.sum((xi_cmp - xi_hat) * res))


def one_step_transition(mdp: TabularMDP, pi: np.ndarray, h: int, f: np.ndarray) -> np.ndarray:
    """``(P^pi_h f)(s, a) = E[f(S', pi_{h+1}(S'))]`` for a stage-(h+1) table."""
    i = _stage(mdp, h, mdp.horizon - 1)
    f = _check_table(mdp, f)
    pi = _check_policy(mdp, pi)
    return mdp.transitions[i] @ _at_policy(f, pi[i + 1])


def multistep_transition(mdp: TabularMDP, pi_star: np.ndarray, h: int, h_prime: int,
                         f: np.ndarray) -> np.ndarray:
    """Apply ``P*_h P*_{h+1} ... P*_{h'-1}`` to a stage-h' table.

    ``h == h_prime`` is the identity.
    """
    _stage(mdp, h, mdp.horizon)
    _stage(mdp, h_prime, mdp.horizon)
    if h_prime < h:
        raise DomainError("need h <= h_prime")
    g = _check_table(mdp, f).copy()
    for k in range(h_prime - 1, h - 1, -1):
        g = one_step_transition(mdp, pi_star, k, g)
    return g
