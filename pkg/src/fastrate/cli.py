"""Command-line entry point.

Every command writes its artifacts plus ``<command>.manifest.json`` into
``--out``, so several commands can share one output directory.
The manifest holds the resolved configuration, the command inputs, the
package version, PRNG details, SHA-256 hashes of every artifact and
wall-clock timings.  Passing a manifest back through ``--config`` replays
the run and reproduces the artifacts bit for bit.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import io as fio
from . import mdp as M
from . import rng as rngmod
from .config import ExperimentConfig, load_config, load_preset
from .diagnostics import (disk_curvature_check, quadratic_action_mdp, quadratic_scaling_family,
                          random_disk_instance, stability_coefficients_sampled)
from .errors import ConfigError, EstimationError, FastRateError
from .evaluation import ValueEstimate
from .experiment import TrialResult, aggregate, build_reference, rate_fit, run_sweep
from .mountain_car import sample_offline_dataset
from .online import TwoPhaseConfig, cumulative_regret, linear_bandit_env, run_two_phase

COMMANDS = ("generate-data", "build-reference", "sweep", "rate-fit", "diagnose", "online", "tabular-verify")
TELESCOPE_SLACK = -1e-9


class NumericFailure(FastRateError):
    """A verification command found violations."""


def manifest_path(out: Path, command: str) -> Path:
    return out / f"{command}.manifest.json"


class Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, command: str, cfg: ExperimentConfig, out: Path, inputs: dict):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.inputs = inputs
        self.artifacts: list[str] = []
        self.timings: dict[str, float] = {}
        self._t0 = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.out / name

    def lap(self, label: str) -> None:
        now = time.perf_counter()
        self.timings[label] = round(now - self._t0, 6)
        self._t0 = now

    def finish(self, summary: dict | None = None) -> dict:
        manifest = {
            "command": self.command,
            "version": __version__,
            "prng": rngmod.PRNG_NAME,
            "normal_method": rngmod.NORMAL_METHOD,
            "config": self.cfg.snapshot(),
            "inputs": self.inputs,
            "artifacts": {a: fio.sha256_file(self.out / a) for a in sorted(set(self.artifacts))},
            "timings": self.timings,
            "summary": summary or {},
        }
        manifest_path(self.out, self.command).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return manifest


# ---------------------------------------------------------------------------
# commands


def cmd_generate_data(cfg: ExperimentConfig, run: Run | None) -> dict:
    n = cfg["data"]["n"]
    if run is None:
        print(f"would sample {n} transitions into dataset.csv")
        return {}
    data = sample_offline_dataset(n, rngmod.stream(cfg.seed, rngmod.DATASET), cfg.mc_params())
    fio.write_mc_dataset(run.path("dataset.csv"), data)
    run.lap("sample")
    return {"rows": n}


def _eval_signature(snap: dict) -> dict:
    """Config sections that must agree between a reference and a sweep for paired evaluation."""
    return {k: snap[k] for k in ("mountain_car", "evaluation")} | {"seed": snap["run"]["seed"]}


def cmd_build_reference(cfg: ExperimentConfig, run: Run | None) -> dict:
    sc = cfg.sweep_config()
    if run is None:
        print(f"would fit FQI on {sc.reference_n} samples (d = {sc.spec.dim}) and evaluate "
              f"{sc.evaluation.n_cells} cells of {sc.evaluation.steps} steps")
        return {}
    fit, est = build_reference(sc)
    run.lap("reference")
    fio.write_weights_bin(run.path("reference_weights.bin"), fit.weights)
    fio.write_weights_csv(run.path("reference_weights.csv"), fit.weights)
    fio.write_weights_bin(run.path("reference_returns.bin"), est.returns)
    fio.write_csv(run.path("reference_value.csv"), ["mean", "stderr", "count", "iterations", "converged"],
                  [[est.mean, est.stderr, est.count, fit.iterations, str(fit.converged).lower()]])
    fio.write_csv(run.path("fqi_history.csv"), ["iter", "weight_change"],
                  [[i + 1, c] for i, c in enumerate(fit.history)])
    return {"value": est.mean, "stderr": est.stderr, "iterations": fit.iterations}


def load_reference(ref_dir: Path, cfg: ExperimentConfig) -> ValueEstimate:
    returns_path = ref_dir / "reference_returns.bin"
    value_path = ref_dir / "reference_value.csv"
    if not returns_path.exists() or not value_path.exists():
        raise ConfigError(f"no reference policy in {ref_dir}; run 'fastrate build-reference' with the "
                          "same configuration first, or pass --reference DIR")
    man_path = manifest_path(ref_dir, "build-reference")
    if man_path.exists():
        ref_snap = json.loads(man_path.read_text())["config"]
        if _eval_signature(ref_snap) != _eval_signature(cfg.snapshot()):
            raise ConfigError(f"reference in {ref_dir} was evaluated under a different environment, "
                              "evaluation grid or seed; rebuild it with 'fastrate build-reference'")
    _, rows = fio.read_csv(value_path)
    returns = fio.read_weights_bin(returns_path)
    mean, stderr, count = float(rows[0][0]), float(rows[0][1]), int(rows[0][2])
    return ValueEstimate(mean, stderr, count, returns)


def _write_rate_fit(run: Run, results: list[TrialResult]) -> dict:
    s = run.cfg["sweep"]
    fit = rate_fit(results, s["rate_points"], bootstrap=s["bootstrap"], seed=run.cfg.seed)
    fio.write_csv(run.path("rate_fit.csv"), ["slope", "ci_lo", "ci_hi", "points_used"],
                  [[fit.slope, fit.ci_lo, fit.ci_hi, fit.points_used]])
    return {"slope": fit.slope, "ci_lo": fit.ci_lo, "ci_hi": fit.ci_hi, "points_used": fit.points_used,
            "dropped": fit.dropped, "method": fit.method}


def cmd_sweep(cfg: ExperimentConfig, run: Run | None, reference: Path) -> dict:
    sc = cfg.sweep_config()
    if run is None:
        print("size_idx n trial")
        for i, n, t in sc.matrix():
            print(i, n, t)
        return {}
    ref = load_reference(reference, cfg)
    results = run_sweep(sc, ref, cfg["run"]["threads"])
    run.lap("sweep")
    fio.write_csv(run.path("results.csv"), ["n", "trial", "gap", "stderr"],
                  [[r.n, r.trial, r.gap, r.stderr] for r in results])
    fio.write_csv(run.path("trials.csv"), ["n", "trial", "value", "iterations", "converged"],
                  [[r.n, r.trial, r.value, r.iterations, str(r.converged).lower()] for r in results])
    fio.write_csv(run.path("summary.csv"), ["n", "mean_gap", "stderr", "trials"], aggregate(results))
    try:
        out = _write_rate_fit(run, results)
    except EstimationError as exc:
        # keep the per-trial artifacts and report the failed fit through the exit code
        return {"error": f"rate fit failed: {exc}"}
    run.lap("rate_fit")
    return out


def read_results(path: Path) -> list[TrialResult]:
    header, rows = fio.read_csv(path)
    if header != ["n", "trial", "gap", "stderr"]:
        raise ConfigError(f"{path} is not a sweep results file")
    return [TrialResult(int(n), int(t), float(g), float(se), float("nan"), 0, False) for n, t, g, se in rows]


def cmd_rate_fit(cfg: ExperimentConfig, run: Run | None, results_path: Path) -> dict:
    if not results_path.exists():
        raise ConfigError(f"results file {results_path} not found; run 'fastrate sweep' first")
    if run is None:
        print(f"would fit the last {cfg['sweep']['rate_points']} sizes of {results_path}")
        return {}
    return _write_rate_fit(run, read_results(results_path))


def cmd_diagnose(cfg: ExperimentConfig, run: Run | None) -> dict:
    c = cfg["diagnose"]
    if run is None:
        print(f"would study {c['instances']} quadratic-action instances ({c['trials']} draws each) "
              f"and {c['disk_instances']} disk instances")
        return {}
    rows = []
    for i in range(c["instances"]):
        rng = rngmod.stream(cfg.seed, rngmod.DIAGNOSTIC, i)
        inst = quadratic_action_mdp(rng, c["n_states"], c["horizon"], c["n_actions"])
        est = stability_coefficients_sampled(inst.mdp, inst.features, c["trials"], rng)
        H = inst.mdp.horizon
        for h in range(1, H):
            rows.append([f"kappa_star_lb[{i}]", h, h + 1, est.kappa_star[h - 1]])
        for h in range(1, H + 1):
            for hp in range(h, H + 1):
                rows.append([f"kappa_lb[{i}]", h, hp, est.kappa[h - 1, hp - 1]])
        fam = quadratic_scaling_family(inst, rng)
        rows.append([f"scaling_slope[{i}]", 0, 0, fam.slope])
        rows.append([f"in_neighborhood[{i}]", 0, 0, float(fam.in_neighborhood)])
    run.lap("stability")
    rng = rngmod.stream(cfg.seed, rngmod.DIAGNOSTIC, c["instances"])
    failures = 0
    worst1 = worst2 = -np.inf
    for _ in range(c["disk_instances"]):
        rep = disk_curvature_check(random_disk_instance(rng))
        failures += not rep.all_ok
        worst1 = max(worst1, rep.curv1_ratio)
        worst2 = max(worst2, rep.curv2_ratio)
    rows += [["disk_failures", 0, 0, float(failures)], ["disk_max_curv1_ratio", 0, 0, worst1],
             ["disk_max_curv2_ratio", 0, 0, worst2]]
    run.lap("disk")
    fio.write_csv(run.path("diagnostics.csv"), ["quantity", "h", "h_prime", "value"], rows)
    return {"disk_failures": failures}


def cmd_online(cfg: ExperimentConfig, run: Run | None) -> dict:
    c = cfg["online"]
    tp = TwoPhaseConfig(c["burn_in"], c["total"], c["ridge"], c["split_stages"], cfg.seed)
    if run is None:
        print(f"would run {tp.total} episodes: {tp.burn_in} exploration episodes then {tp.blocks} greedy blocks")
        return {}
    env = linear_bandit_env(rngmod.stream(cfg.seed, rngmod.TABULAR, 0), c["n_contexts"], c["dim"], c["noise"])
    trace = run_two_phase(env, tp)
    total, series = cumulative_regret(trace.values, trace.optimal)
    baseline = tp.total * (trace.optimal - env.value(None))
    run.lap("online")
    fio.write_csv(run.path("trace.csv"), ["t", "block", "J_hat", "regret_cum"],
                  [[t + 1, int(b), v, r] for t, (b, v, r) in enumerate(zip(trace.block, trace.values, series))])
    fio.write_csv(run.path("blocks.csv"), ["block", "start", "stop", "mean_regret", "shift_norm"],
                  [[k, s, e, float(trace.regret[s:e].mean()), (np.nan if k < 0 else trace.shift_norms[k])]
                   for k, s, e in trace.data_blocks])
    return {"regret": total, "exploration_baseline": baseline, "optimal_value": trace.optimal}


def random_telescope_case(rng: np.random.Generator, max_states: int, max_actions: int, max_horizon: int):
    S = int(rng.integers(1, max_states + 1))
    A = int(rng.integers(1, max_actions + 1))
    H = int(rng.integers(1, max_horizon + 1))
    mdp = M.random_mdp(rng, S, A, H)
    f_hat = rng.standard_normal((H, S, A))
    f_hat[H - 1] = mdp.rewards[H - 1]
    comparator = rng.integers(0, A, size=(H, S))
    return mdp, f_hat, comparator


def telescope_slack(mdp, f_hat, comparator) -> tuple[float, float]:
    """``(J(comparator) - J(greedy), rhs)`` for the greedy policy of ``f_hat``."""
    greedy = M.greedy_policy(f_hat)
    gap = M.policy_value(mdp, comparator) - M.policy_value(mdp, greedy)
    return gap, M.telescope_rhs(mdp, f_hat, comparator, greedy)


def cmd_tabular_verify(cfg: ExperimentConfig, run: Run | None) -> dict:
    c = cfg["tabular"]
    if run is None:
        print(f"would check the telescope bound on {c['instances']} random MDPs")
        return {}
    rows = []
    violations = 0
    for i in range(c["instances"]):
        rng = rngmod.stream(cfg.seed, rngmod.TABULAR, i)
        mdp, f_hat, cmp = random_telescope_case(rng, c["max_states"], c["max_actions"], c["max_horizon"])
        gap, rhs = telescope_slack(mdp, f_hat, cmp)
        slack = rhs - gap
        violations += slack < TELESCOPE_SLACK
        rows.append([i, mdp.n_states, mdp.n_actions, mdp.horizon, gap, rhs, slack])
    run.lap("verify")
    fio.write_csv(run.path("tabular_verify.csv"), ["instance", "S", "A", "H", "gap", "rhs", "slack"], rows)
    out = {"instances": c["instances"], "violations": int(violations)}
    if violations:
        out["error"] = f"{violations} telescope violations"
    return out


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fastrate", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="INI file or a run manifest to replay")
        s.add_argument("--preset", help="bundled configuration (desk or paper)")
        s.add_argument("--seed", type=int, help="master seed (overrides the config)")
        s.add_argument("--out", type=Path, default=Path("."), help="output directory")
        s.add_argument("--threads", type=int, help="worker processes")
        s.add_argument("--dry-run", action="store_true", help="describe the work without running it")
        if name == "sweep":
            s.add_argument("--reference", type=Path, help="directory written by build-reference (default: --out)")
        if name == "rate-fit":
            s.add_argument("--results", type=Path, help="sweep results CSV (default: OUT/results.csv)")
    return p


def resolve_config(args) -> tuple[ExperimentConfig, dict]:
    """Configuration plus the inputs recorded by a replayed manifest (if any)."""
    if args.config is not None and args.preset is not None:
        raise ConfigError("use either --config or --preset, not both")
    inputs: dict = {}
    if args.preset is not None:
        cfg = load_preset(args.preset)
    elif args.config is not None:
        cfg = load_config(args.config)
        if args.config.suffix == ".json":
            inputs = json.loads(args.config.read_text()).get("inputs", {})
    else:
        cfg = ExperimentConfig()
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg.set("run", "seed", args.seed)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg.set("run", "threads", args.threads)
    return cfg, inputs


def dispatch(args) -> dict:
    cfg, replay = resolve_config(args)
    out = args.out
    inputs: dict = {}
    if args.command == "sweep":
        ref = args.reference or (Path(replay["reference"]) if "reference" in replay else out)
        inputs["reference"] = str(ref)
    elif args.command == "rate-fit":
        res = args.results or (Path(replay["results"]) if "results" in replay else out / "results.csv")
        inputs["results"] = str(res)
    run = None if args.dry_run else Run(args.command, cfg, out, inputs)
    handlers = {
        "generate-data": lambda: cmd_generate_data(cfg, run),
        "build-reference": lambda: cmd_build_reference(cfg, run),
        "sweep": lambda: cmd_sweep(cfg, run, Path(inputs["reference"])),
        "rate-fit": lambda: cmd_rate_fit(cfg, run, Path(inputs["results"])),
        "diagnose": lambda: cmd_diagnose(cfg, run),
        "online": lambda: cmd_online(cfg, run),
        "tabular-verify": lambda: cmd_tabular_verify(cfg, run),
    }
    summary = handlers[args.command]()
    if run is None:
        return {}
    run.finish(summary)
    for k, v in summary.items():
        print(f"{k}: {v}")
    if "error" in summary:
        raise NumericFailure(summary["error"])
    return summary


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FastRateError as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
