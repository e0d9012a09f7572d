"""Mountain Car sample-size sweep: fit, evaluate, and measure the decay rate of the value gap."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .evaluation import (EvalConfig, GreedyCubicPolicy, RateFit, ValueEstimate, fit_loglog_rate,
                         mc_policy_value, paired_gap_stderr, value_gap)
from .features import MountainCarFeatures, ProductFeatureSpec
from .fqi import FqiConfig, fqi_discounted
from .mountain_car import DEFAULT, MCParams, sample_offline_dataset


def exp_sizes(k_start: float, k_stop: float, k_step: float) -> list[int]:
    """``floor(e^k)`` for ``k = k_start, k_start + k_step, ..., k_stop``."""
    count = int(round((k_stop - k_start) / k_step)) + 1
    return [int(math.floor(math.exp(k_start + i * k_step))) for i in range(count)]


@dataclass(frozen=True)
class SweepConfig:
    sizes: tuple = tuple(exp_sizes(10.5, 13.0, 0.25))
    trials: int = 80
    spec: ProductFeatureSpec = ProductFeatureSpec()
    fqi: FqiConfig = FqiConfig()
    evaluation: EvalConfig = EvalConfig()
    reference_n: int = 6_400_000
    rate_points: int = 6
    seed: int = 0
    env: MCParams = field(default=DEFAULT)

    def matrix(self) -> list[tuple[int, int, int]]:
        """``(size index, n, trial)`` units in canonical order."""
        return [(i, n, t) for i, n in enumerate(self.sizes) for t in range(self.trials)]


@dataclass
class TrialResult:
    n: int
    trial: int
    gap: float
    stderr: float
    value: float
    iterations: int
    converged: bool


def fit_and_evaluate(cfg: SweepConfig, data_rng: np.random.Generator, n: int):
    fm = MountainCarFeatures(cfg.spec)
    data = sample_offline_dataset(n, data_rng, cfg.env)
    fit = fqi_discounted(data, fm, cfg.fqi)
    est = mc_policy_value(cfg.env, GreedyCubicPolicy(fm, fit.weights), cfg.evaluation)
    return fit, est


def build_reference(cfg: SweepConfig):
    """Reference fit on ``reference_n`` samples from its own stream."""
    return fit_and_evaluate(cfg, rngmod.stream(cfg.seed, rngmod.REFERENCE), cfg.reference_n)


def run_trial(cfg: SweepConfig, size_idx: int, n: int, trial: int, reference: ValueEstimate) -> TrialResult:
    fit, est = fit_and_evaluate(cfg, rngmod.stream(cfg.seed, rngmod.DATASET, size_idx, trial), n)
    return TrialResult(n, trial, value_gap(reference, est), paired_gap_stderr(reference, est),
                       est.mean, fit.iterations, fit.converged)


def _run_unit(args):
    return run_trial(*args)


def run_sweep(cfg: SweepConfig, reference: ValueEstimate, threads: int = 1) -> list[TrialResult]:
    """All ``(n, trial)`` units; results come back in canonical order regardless of scheduling."""
    units = [(cfg, i, n, t, reference) for i, n, t in cfg.matrix()]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_run_unit, units))
    return [_run_unit(u) for u in units]


def aggregate(results: list[TrialResult]) -> list[tuple[int, float, float, int]]:
    """Per-size ``(n, mean gap, stderr over trials, trials)``."""
    by_n: dict[int, list[float]] = {}
    for r in sorted(results, key=lambda r: (r.n, r.trial)):
        by_n.setdefault(r.n, []).append(r.gap)
    out = []
    for n in sorted(by_n):
        g = np.array(by_n[n])
        se = float(np.std(g, ddof=1) / np.sqrt(g.size)) if g.size > 1 else 0.0
        out.append((n, float(g.mean()), se, g.size))
    return out


def rate_fit(results: list[TrialResult], k_last: int, bootstrap: int = 0, seed: int = 0) -> RateFit:
    agg = aggregate(results)
    reps = {}
    for r in results:
        reps.setdefault(r.n, []).append(r.gap)
    return fit_loglog_rate([(n, g) for n, g, _, _ in agg], min(k_last, len(agg)),
                           replicates=reps if bootstrap else None, bootstrap=bootstrap, seed=seed)
