"""INI experiment configuration with a fixed schema.

Every section and key must appear in ``SCHEMA``; anything else is a
``ConfigError`` so that typos fail loudly.  Missing keys take the schema
default.  ``snapshot()`` gives the fully resolved configuration, which is
what run manifests record and what ``from_snapshot`` replays.
"""

from __future__ import annotations

import configparser
import io
import json
from dataclasses import fields
from importlib import resources
from pathlib import Path

from .errors import ConfigError
from .evaluation import EvalConfig
from .experiment import SweepConfig, exp_sizes
from .features import ProductFeatureSpec
from .fqi import FqiConfig
from .mountain_car import MCParams


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s: str):
    return None if s.strip().lower() in ("default", "none", "") else float(s)


def _int_list(s: str) -> list[int] | None:
    if s.strip().lower() in ("default", "none", ""):
        return None
    return [int(x) for x in s.replace(",", " ").split()]


SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {"seed": (int, 0), "threads": (int, 1)},
    "mountain_car": {f.name: (float, f.default) for f in fields(MCParams)},
    "features": {"n_position": (int, 50), "n_velocity": (int, 15), "force_degree": (int, 3),
                 "unit_rescale": (_bool, False)},
    "fqi": {"ridge": (_opt_float, None), "max_iterations": (int, 500), "patience": (int, 5),
            "tolerance": (float, 0.005)},
    "evaluation": {"n_positions": (int, 1000), "trajectories": (int, 30), "steps": (int, 1000),
                   "stratified": (_bool, False)},
    "sweep": {"k_start": (float, 10.5), "k_stop": (float, 13.0), "k_step": (float, 0.25),
              "sizes": (_int_list, None), "trials": (int, 80), "reference_n": (int, 6_400_000),
              "rate_points": (int, 6), "bootstrap": (int, 0)},
    "data": {"n": (int, 10_000)},
    "tabular": {"instances": (int, 200), "max_states": (int, 6), "max_actions": (int, 4),
                "max_horizon": (int, 6)},
    "diagnose": {"instances": (int, 5), "trials": (int, 50), "n_states": (int, 3), "horizon": (int, 3),
                 "n_actions": (int, 2001), "disk_instances": (int, 10_000)},
    "online": {"burn_in": (int, 20), "total": (int, 1280), "ridge": (float, 1e-3),
               "split_stages": (_bool, True), "n_contexts": (int, 8), "dim": (int, 3),
               "noise": (float, 0.25)},
}


def _encode(v) -> str:
    if v is None:
        return "default"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return " ".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


class ExperimentConfig:
    """Resolved configuration: ``values[section][key]`` with schema types."""

    def __init__(self, values: dict | None = None):
        self.values = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}
        for sec, kv in (values or {}).items():
            for k, v in kv.items():
                self.set(sec, k, v)

    def set(self, section: str, key: str, value) -> None:
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key '{key}' in [{section}]")
        conv = SCHEMA[section][key][0]
        try:
            self.values[section][key] = conv(value if isinstance(value, str) else _encode(value))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {section}.{key}: {value!r}") from exc

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    # typed views

    def mc_params(self) -> MCParams:
        try:
            return MCParams(**self.values["mountain_car"])
        except Exception as exc:
            raise ConfigError(str(exc)) from exc

    def feature_spec(self) -> ProductFeatureSpec:
        try:
            return ProductFeatureSpec(**self.values["features"])
        except Exception as exc:
            raise ConfigError(str(exc)) from exc

    def fqi_config(self) -> FqiConfig:
        f = self.values["fqi"]
        try:
            return FqiConfig(ridge=f["ridge"], gamma=self.mc_params().gamma, max_iterations=f["max_iterations"],
                             patience=f["patience"], tolerance=f["tolerance"])
        except Exception as exc:
            raise ConfigError(str(exc)) from exc

    def eval_config(self) -> EvalConfig:
        e = self.values["evaluation"]
        try:
            return EvalConfig(n_positions=e["n_positions"], trajectories=e["trajectories"], steps=e["steps"],
                              gamma=self.mc_params().gamma, seed=self.seed, stratified=e["stratified"])
        except Exception as exc:
            raise ConfigError(str(exc)) from exc

    def sizes(self) -> list[int]:
        s = self.values["sweep"]
        sizes = s["sizes"] if s["sizes"] else exp_sizes(s["k_start"], s["k_stop"], s["k_step"])
        if any(b <= a for a, b in zip(sizes, sizes[1:])) or not sizes or sizes[0] < 1:
            raise ConfigError("sample sizes must be positive and strictly increasing")
        return sizes

    def sweep_config(self) -> SweepConfig:
        s = self.values["sweep"]
        if s["trials"] < 1:
            raise ConfigError("trials must be at least 1")
        return SweepConfig(sizes=tuple(self.sizes()), trials=s["trials"], spec=self.feature_spec(),
                           fqi=self.fqi_config(), evaluation=self.eval_config(),
                           reference_n=s["reference_n"], rate_points=s["rate_points"], seed=self.seed,
                           env=self.mc_params())

    # serialization

    def snapshot(self) -> dict:
        return {sec: {k: _encode(v) for k, v in kv.items()} for sec, kv in self.values.items()}

    @classmethod
    def from_snapshot(cls, snap: dict) -> "ExperimentConfig":
        return cls(snap)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for sec, kv in self.snapshot().items():
            cp[sec] = kv
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def parse_ini(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = ExperimentConfig()
    for sec in cp.sections():
        for k, v in cp[sec].items():
            cfg.set(sec, k, v)
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read an INI file, or a run manifest (JSON) whose config snapshot is replayed."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if p.suffix == ".json":
        try:
            snap = json.loads(text)["config"]
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{path} is not a run manifest") from exc
        return ExperimentConfig.from_snapshot(snap)
    return parse_ini(text)


def load_preset(name: str) -> ExperimentConfig:
    try:
        text = resources.files("fastrate").joinpath("presets", f"{name}.ini").read_text()
    except (FileNotFoundError, OSError) as exc:
        raise ConfigError(f"unknown preset '{name}'") from exc
    return parse_ini(text)
