"""Ridge regression and fitted Q-iteration.

The ridge problem is solved in its normal-equation form

    (Sigma_hat + lam I) w = Phi^T y / n,    Sigma_hat = Phi^T Phi / n,

with a Cholesky factorization that is computed once per design and reused
for every new right-hand side.  Fitted Q-iteration only changes the
targets between iterations, so this reuse is the main cost saving.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import mdp as mdpmod
from .errors import ContractViolation, DataError, SingularSystemError, StructureError
from .features import DenseDesign

JITTER = 1e-10
PIVOT_RATIO = 1e-12
RANK_EPS = 10.0 * np.finfo(float).eps


@dataclass
class Dataset:
    """Quadruples ``(s, a, r, s')``; ``stage`` is an optional 1-based tag."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    stage: int | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states)
        self.actions = np.asarray(self.actions)
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.next_states = np.asarray(self.next_states)
        n = self.rewards.shape[0]
        if n < 1:
            raise DataError("dataset must contain at least one row")
        if not (len(self.states) == len(self.actions) == len(self.next_states) == n):
            raise StructureError("dataset columns have different lengths")
        for name in ("states", "actions", "rewards", "next_states"):
            arr = getattr(self, name)
            if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
                raise DataError(f"{name} must be finite")

    @property
    def n(self) -> int:
        return self.rewards.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.states[idx], self.actions[idx], self.rewards[idx],
                       self.next_states[idx], self.stage)


def _as_design(features):
    if hasattr(features, "gram") and hasattr(features, "rmatvec"):
        return features
    phi = np.asarray(features, dtype=float)
    if phi.ndim != 2:
        raise StructureError("features must be an n x d matrix")
    if not np.all(np.isfinite(phi)):
        raise DataError("features must be finite")
    return DenseDesign(phi)


class RidgeSolver:
    """Factorized ``Sigma_hat + lam I`` for one design; ``solve`` takes targets."""

    def __init__(self, features, lam: float):
        if not lam >= 0:
            raise DataError("ridge weight must be nonnegative")
        design = _as_design(features)
        self.design = design
        self.n = design.n
        self.dim = design.dim
        gram = design.gram() / self.n
        if not np.all(np.isfinite(gram)):
            raise DataError("features must be finite")
        self.lam = float(lam)
        self.jittered = False
        self._factor = self._factorize(gram)

    def _factorize(self, gram: np.ndarray):
        """Cholesky factor of ``gram + lam I``.

        With ``lam = 0`` a failed or near-singular factorization (smallest
        squared pivot below ``PIVOT_RATIO`` times the mean diagonal) is
        classified by the smallest eigenvalue: at most ``d * RANK_EPS``
        times the mean diagonal is genuine rank deficiency and an error;
        otherwise the failure is roundoff and the factorization is retried
        once with ``JITTER`` times the mean diagonal added.
        """
        d = self.dim
        scale = max(np.trace(gram) / d, np.finfo(float).tiny)
        eye = np.eye(d)
        if self.lam > 0:
            try:
                return cho_factor(gram + self.lam * eye, lower=True)
            except LinAlgError as exc:
                raise SingularSystemError("ridge system is not positive definite") from exc
        try:
            c = cho_factor(gram, lower=True)
            if np.min(np.diag(c[0])) ** 2 / scale >= PIVOT_RATIO:
                return c
        except LinAlgError:
            pass
        if linalg.eigvalsh(gram, subset_by_index=[0, 0])[0] <= d * RANK_EPS * scale:
            raise SingularSystemError("Gram matrix is rank deficient; use a positive ridge weight")
        self.jittered = True
        try:
            return cho_factor(gram + JITTER * scale * eye, lower=True)
        except LinAlgError as exc:
            raise SingularSystemError("Gram matrix is singular even after jitter") from exc

    def solve(self, targets: np.ndarray) -> np.ndarray:
        y = np.asarray(targets, dtype=float)
        if y.shape != (self.n,):
            raise StructureError(f"targets must have length {self.n}")
        if not np.all(np.isfinite(y)):
            raise DataError("targets must be finite")
        return cho_solve(self._factor, self.design.rmatvec(y) / self.n)


def ridge_solve(features, targets: np.ndarray, lam: float) -> np.ndarray:
    """Minimizer of ``mean((y - Phi w)^2) + lam |w|^2``."""
    return RidgeSolver(features, lam).solve(targets)


def ridge_objective(phi: np.ndarray, y: np.ndarray, lam: float, w: np.ndarray) -> float:
    r = y - phi @ w
    return float(np.mean(r * r) + lam * w @ w)


@dataclass(frozen=True)
class FqiConfig:
    """``ridge=None`` means the default ``0.01 / n``."""

    ridge: float | None = None
    gamma: float = 0.97
    max_iterations: int = 500
    patience: int = 5
    tolerance: float = 0.005

    def __post_init__(self):
        if self.ridge is not None and self.ridge < 0:
            raise DataError("ridge weight must be nonnegative")
        if not 0.0 <= self.gamma < 1.0:
            raise DataError("gamma must lie in [0, 1)")
        if self.max_iterations < 1 or self.patience < 1:
            raise DataError("max_iterations and patience must be positive")

    def ridge_for(self, n: int) -> float:
        return 0.01 / n if self.ridge is None else self.ridge


@dataclass
class FqiResult:
    weights: np.ndarray
    iterations: int
    history: list = field(default_factory=list)
    converged: bool = False


def fqi_discounted(data: Dataset, fm, cfg: FqiConfig = FqiConfig()) -> FqiResult:
    """Discounted fitted Q-iteration from ``w = 0``.

    Each iteration regresses ``r + gamma max_a <w, phi(s', a)>`` onto
    ``phi(s, a)``.  Iteration stops at ``max_iterations`` or once
    ``patience`` consecutive updates move ``w`` by less than
    ``tolerance * sqrt(d)`` in Euclidean norm.
    """
    solver = RidgeSolver(fm.design(data.states, data.actions), cfg.ridge_for(data.n))
    cache = fm.state_cache(data.next_states)
    d = fm.dim
    w = np.zeros(d)
    history: list[float] = []
    streak = 0
    converged = False
    for _ in range(cfg.max_iterations):
        y = data.rewards + cfg.gamma * fm.max_q(w, cache)[0]
        if not np.all(np.isfinite(y)):
            raise DataError("non-finite pseudo-response; the iteration diverged")
        w_new = solver.solve(y)
        change = float(np.linalg.norm(w_new - w) / np.sqrt(d))
        history.append(change)
        w = w_new
        streak = streak + 1 if change < cfg.tolerance else 0
        if streak >= cfg.patience:
            converged = True
            break
    return FqiResult(w, len(history), history, converged)


def fqi_finite_horizon(data_per_stage: list, fm, ridge=1e-12, terminal_weights=None,
                       terminal_data: Dataset | None = None) -> np.ndarray:
    """Backward fitted Q-iteration; returns weights of shape ``(H, d)``.

    ``data_per_stage[h-1]`` holds the stage-h transitions for h = 1..H-1.
    The terminal weights come from ``terminal_weights`` or, failing that,
    from a ridge fit of the rewards in ``terminal_data``.  ``ridge`` is a
    scalar or a length-(H-1) schedule.  ``fm`` may be a single feature map
    or one per stage.
    """
    Hm1 = len(data_per_stage)
    H = Hm1 + 1
    fms = list(fm) if isinstance(fm, (list, tuple)) else [fm] * H
    if len(fms) != H:
        raise StructureError("need one feature map per stage")
    lams = np.broadcast_to(np.asarray(ridge, dtype=float), (Hm1,)) if Hm1 else np.zeros(0)
    W = np.zeros((H, fms[-1].dim))
    if terminal_weights is not None:
        W[H - 1] = np.asarray(terminal_weights, dtype=float)
    elif terminal_data is not None:
        lam_H = float(lams[-1]) if Hm1 else float(ridge)
        W[H - 1] = ridge_solve(fms[-1].design(terminal_data.states, terminal_data.actions),
                               terminal_data.rewards, lam_H)
    else:
        raise ContractViolation("terminal stage needs weights or reward data")
    for i in range(H - 2, -1, -1):
        data = data_per_stage[i]
        if data is None or data.n == 0:
            raise DataError(f"missing data for stage {i + 1}")
        nxt = fms[i + 1].max_q(W[i + 1], fms[i + 1].state_cache(data.next_states))[0]
        W[i] = ridge_solve(fms[i].design(data.states, data.actions), data.rewards + nxt, float(lams[i]))
    return W


def stage_q_from_weights(fm, W: np.ndarray) -> np.ndarray:
    """Q-tables ``(H, S, A)`` for finite feature tables."""
    return np.stack([fm.q_table(w) for w in W])


def bellman_residual_norm(mdp: mdpmod.TabularMDP, f_hat: np.ndarray, pi_star: np.ndarray, h: int) -> float:
    """Occupancy norm of ``B*_h f_{h+1} - f_h`` under ``pi_star`` (1 <= h <= H-1)."""
    f_hat = np.asarray(f_hat, dtype=float)
    res = mdpmod.apply_optimality_operator(mdp, f_hat[h], h) - f_hat[h - 1]
    return mdpmod.occupancy_norm(mdp, pi_star, res, h)


def regular_sequence_check(eps) -> bool:
    """True iff each ``eps_h`` is at least the mean of the later entries."""
    eps = np.asarray(eps, dtype=float)
    H = eps.shape[0]
    for i in range(H - 1):
        if eps[i] < eps[i + 1:].mean() * (1 - 1e-12):
            return False
    return True
