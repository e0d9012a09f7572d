"""Monte-Carlo policy evaluation, value gaps and log-log rate fits."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import rng as rngmod
from .errors import DataError, DomainError, EstimationError
from .features import MountainCarFeatures
from .fqi import FqiConfig, FqiResult, fqi_discounted
from .mountain_car import MCParams, sample_offline_dataset, simulate_returns

CELL_CHUNK = 4096


@dataclass(frozen=True)
class EvalConfig:
    """Grid of initial positions times independent trajectories per position.

    Position ``j`` of ``n_positions`` is ``center + 2 halfwidth j / n_positions``
    for ``j = -n_positions/2, ..., n_positions/2 - 1``; velocity starts at 0.
    """

    n_positions: int = 1000
    trajectories: int = 30
    steps: int = 1000
    gamma: float = 0.97
    seed: int = 0
    center: float = -0.5
    halfwidth: float = 0.1
    stratified: bool = False

    def __post_init__(self):
        if self.n_positions < 1 or self.trajectories < 1 or self.steps < 0:
            raise DomainError("evaluation counts must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise DomainError("gamma must lie in [0, 1)")

    def positions(self) -> np.ndarray:
        m = self.n_positions
        j = np.arange(-(m // 2), m - m // 2)
        return self.center + 2.0 * self.halfwidth * j / m

    @property
    def n_cells(self) -> int:
        return self.n_positions * self.trajectories


@dataclass
class ValueEstimate:
    mean: float
    stderr: float
    count: int
    returns: np.ndarray | None = None


class GreedyCubicPolicy:
    """Force maximizing ``<w, phi(p, v, f)>`` over ``[-1, 1]``."""

    def __init__(self, fm: MountainCarFeatures, w: np.ndarray):
        self.fm = fm
        self.w = np.asarray(w, dtype=float)

    def __call__(self, p, v):
        return self.fm.max_q(self.w, self.fm.state_features(p, v))[1]


def cell_noise(cfg: EvalConfig, start: int, stop: int) -> np.ndarray:
    """Standard normals for cells ``start..stop-1``, one stream per cell."""
    out = np.empty((stop - start, cfg.steps, 2))
    for c in range(start, stop):
        out[c - start] = rngmod.stream(cfg.seed, rngmod.EVALUATION, c).standard_normal((cfg.steps, 2))
    return out


def evaluate_returns(env: MCParams, policy, cfg: EvalConfig, reward_fn=None) -> np.ndarray:
    """Discounted returns for every cell, ordered position-major."""
    p0 = np.repeat(cfg.positions(), cfg.trajectories)
    out = np.empty(cfg.n_cells)
    for start in range(0, cfg.n_cells, CELL_CHUNK):
        stop = min(start + CELL_CHUNK, cfg.n_cells)
        out[start:stop] = simulate_returns(policy, p0[start:stop], cell_noise(cfg, start, stop),
                                           cfg.gamma, env, reward_fn)
    return out


def _summarize(returns: np.ndarray, cfg: EvalConfig) -> tuple[float, float]:
    mean = float(np.mean(returns))
    n = returns.size
    if n < 2:
        return mean, 0.0
    if cfg.stratified and cfg.trajectories > 1:
        r = returns.reshape(cfg.n_positions, cfg.trajectories)
        var = np.var(r, axis=1, ddof=1) / cfg.trajectories
        return mean, float(np.sqrt(var.sum()) / cfg.n_positions)
    return mean, float(np.std(returns, ddof=1) / np.sqrt(n))


def mc_policy_value(env: MCParams, policy, cfg: EvalConfig, reward_fn=None) -> ValueEstimate:
    """Mean and standard error of discounted returns over the evaluation grid."""
    returns = evaluate_returns(env, policy, cfg, reward_fn)
    mean, se = _summarize(returns, cfg)
    return ValueEstimate(mean, se, returns.size, returns)


def value_gap(reference: ValueEstimate, candidate: ValueEstimate) -> float:
    return float(reference.mean - candidate.mean)


def paired_gap_stderr(reference: ValueEstimate, candidate: ValueEstimate) -> float:
    """Standard error of the mean per-cell difference (requires stored returns)."""
    if reference.returns is None or candidate.returns is None:
        raise DataError("paired standard error needs per-cell returns")
    diff = reference.returns - candidate.returns
    if diff.size < 2:
        return 0.0
    return float(np.std(diff, ddof=1) / np.sqrt(diff.size))


@dataclass
class RateFit:
    slope: float
    intercept: float
    ci_lo: float
    ci_hi: float
    points_used: int
    residual_se: float
    dropped: int = 0
    method: str = "t"


def _ols(x: np.ndarray, y: np.ndarray):
    xm = x.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = np.sum((x - xm) * (y - y.mean())) / sxx
    intercept = y.mean() - slope * xm
    resid = y - intercept - slope * x
    dof = x.size - 2
    rse = np.sqrt(np.sum(resid**2) / dof)
    return slope, intercept, rse, np.sqrt(rse**2 / sxx), dof


def fit_loglog_rate(points, k_last: int | None = None, replicates=None, bootstrap: int = 0,
                    seed: int = 0, level: float = 0.95) -> RateFit:
    """Least-squares slope of ``log gap`` against ``log n`` over the last ``k_last`` points.

    The interval is a t-interval by default.  When ``replicates`` maps each
    ``n`` to its per-trial gaps and ``bootstrap > 0``, trials are resampled
    within each size and the percentile interval of the refitted slope is
    reported instead.  Nonpositive gaps are dropped and counted.
    """
    pts = sorted((float(n), float(g)) for n, g in points)
    if k_last is not None:
        if k_last > len(pts):
            raise DomainError("k_last exceeds the number of points")
        pts = pts[len(pts) - k_last:]
    usable = [(n, g) for n, g in pts if g > 0 and np.isfinite(g)]
    dropped = len(pts) - len(usable)
    if dropped:
        warnings.warn(f"dropped {dropped} nonpositive gaps from the rate fit", RuntimeWarning)
    if len(usable) < 3:
        raise EstimationError("need at least 3 positive gaps for a rate fit")
    x = np.log([n for n, _ in usable])
    y = np.log([g for _, g in usable])
    slope, intercept, rse, se, dof = _ols(x, y)
    if replicates is not None and bootstrap > 0:
        g = rngmod.stream(seed, rngmod.DIAGNOSTIC)
        sizes = [n for n, _ in usable]
        reps = [np.asarray(replicates[int(n)] if int(n) in replicates else replicates[n], dtype=float)
                for n in sizes]
        boot = []
        for _ in range(bootstrap):
            means = np.array([r[g.integers(0, r.size, r.size)].mean() for r in reps])
            if np.all(means > 0):
                boot.append(_ols(x, np.log(means))[0])
        if len(boot) < 10:
            raise EstimationError("too few bootstrap resamples with positive gaps")
        lo, hi = np.quantile(boot, [(1 - level) / 2, (1 + level) / 2])
        lo, hi = min(lo, slope), max(hi, slope)
        return RateFit(float(slope), float(intercept), float(lo), float(hi), len(usable),
                       float(rse), dropped, "bootstrap")
    tq = stats.t.ppf((1 + level) / 2, dof)
    return RateFit(float(slope), float(intercept), float(slope - tq * se), float(slope + tq * se),
                   len(usable), float(rse), dropped, "t")


def build_reference_policy(env: MCParams, big_n: int, fm: MountainCarFeatures, fqi_cfg: FqiConfig,
                           eval_cfg: EvalConfig, seed: int) -> tuple[FqiResult, ValueEstimate]:
    """Large-sample FQI fit and its evaluation under ``eval_cfg``."""
    data = sample_offline_dataset(big_n, rngmod.stream(seed, rngmod.REFERENCE), env)
    fit = fqi_discounted(data, fm, fqi_cfg)
    est = mc_policy_value(env, GreedyCubicPolicy(fm, fit.weights), eval_cfg)
    return fit, est

