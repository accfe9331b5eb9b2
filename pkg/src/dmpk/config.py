"""Run configuration: TOML files with sections run, sde, mc, geometry, tolerances."""

import enum
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DmpkError
from .micro import Distribution, WireGeometry

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class Experiment(enum.Enum):
    OHM = "OHM"
    UCF = "UCF"
    COVARIANCE = "COVARIANCE"
    COMPARE_B2 = "COMPARE_B2"
    MICRO_SCALING = "MICRO_SCALING"
    HIERARCHY_CHECK = "HIERARCHY_CHECK"


# section -> key -> RunConfig field
SCHEMA = {
    "run": {"experiment": "experiment", "output_dir": "output_dir"},
    "sde": {"beta": "beta", "betas": "betas", "n": "n", "n_ladder": "n_ladder",
            "s_grid": "s_grid", "ds": "ds", "policy": "policy", "p_values": "p_values",
            "delta": "delta"},
    "mc": {"n_trajectories": "n_trajectories", "seed": "master_seed", "threads": "threads",
           "block_size": "block_size"},
    "geometry": {"n": "geometry_n", "gamma": "gamma", "h1": "h1", "h2": "h2", "h0": "h0",
                 "energy": "energy", "lambda": "lam", "lambdas": "lambdas",
                 "distribution": "distribution", "max_layers": "max_layers"},
}

TOLERANCE_KEYS = {
    Experiment.OHM: {"max_dev": 0.06, "check_n": 16, "check_s": 1.0, "n_se": 3.0},
    Experiment.UCF: {"var_lo": 0.045, "var_hi": 0.09, "ratio_rel": 0.35, "check_s": 3.0},
    Experiment.COVARIANCE: {"var_rel": 0.1, "diag_corr_min": 0.9, "nonexc_corr_max": 0.1,
                            "exc_threshold": 0.5, "mean_n_se": 4.0},
    Experiment.COMPARE_B2: {"n_se": 3.0, "ks_alpha": 0.01, "pu_defect": 1e-10},
    Experiment.MICRO_SCALING: {"n_se": 3.0},
    Experiment.HIERARCHY_CHECK: {"n_se": 3.0},
}

_DEFAULTS = {
    Experiment.OHM: dict(beta=2, n_ladder=[4, 8, 16, 32], s_grid=[0.5, 1.0, 2.0],
                         n_trajectories=20000, p_values=[1, 2]),
    Experiment.UCF: dict(betas=[2, 1], n=32, s_grid=[2.0, 3.0, 4.0], n_trajectories=40000),
    Experiment.COVARIANCE: dict(geometry_n=2, gamma=np.pi / 8, energy=1.0, h0=0.2, lam=0.02,
                                s_grid=[1.0], n_trajectories=10000),
    Experiment.COMPARE_B2: dict(beta=2, n=4, s_grid=[0.5, 1.0], n_trajectories=20000),
    Experiment.MICRO_SCALING: dict(geometry_n=2, gamma=np.pi / 8, energy=1.0, h0=0.2,
                                   lambdas=[0.2, 0.1, 0.05, 0.02], s_grid=[0.5, 1.0],
                                   n_trajectories=2000),
    Experiment.HIERARCHY_CHECK: dict(betas=[1, 2], n=4, p_values=[1, 2], s_grid=[0.5],
                                     delta=0.05, n_trajectories=20000),
}


@dataclass(frozen=True)
class RunConfig:
    experiment: Experiment
    beta: int = 2
    betas: tuple = ()
    n: int = 4
    n_ladder: tuple = ()
    s_grid: tuple = (1.0,)
    ds: float = 1e-3
    policy: str = "EXP"
    p_values: tuple = (1,)
    delta: float = 0.05
    n_trajectories: int = 1000
    master_seed: int = 0
    threads: int = 1
    block_size: int = 256
    geometry_n: int | None = None
    gamma: float = 0.0
    h1: float | None = None
    h2: float | None = None
    h0: float | None = None
    energy: float = 1.0
    lam: float | None = None
    lambdas: tuple = ()
    distribution: str = "GAUSSIAN"
    max_layers: float = 1e8
    output_dir: str = "results"
    tolerances: dict = field(default_factory=dict)

    def geometry(self, lam=None):
        """WireGeometry; hoppings default to h0 * sqrt(lambda)."""
        if self.geometry_n is None:
            raise ConfigError("geometry.n is required for this experiment")
        lam = self.lam if lam is None else lam
        h1, h2 = self.h1, self.h2
        if h1 is None or h2 is None:
            if self.h0 is None or lam is None:
                raise ConfigError("geometry needs h1 and h2, or h0 and lambda")
            h = self.h0 * np.sqrt(lam)
            h1 = h if h1 is None else h1
            h2 = h if h2 is None else h2
        try:
            return WireGeometry(int(self.geometry_n), float(self.gamma), float(h1), float(h2),
                                float(self.energy))
        except DmpkError as exc:
            raise ConfigError(f"geometry: {exc}") from exc

    def tol(self, key):
        return self.tolerances[key]


def _tuple(v):
    return tuple(v) if isinstance(v, (list, tuple)) else (v,)


def as_experiment(value):
    if isinstance(value, Experiment):
        return value
    try:
        return Experiment(str(value).upper())
    except ValueError:
        raise ConfigError(f"run.experiment: unknown experiment {value!r}") from None


def default_config(experiment):
    experiment = as_experiment(experiment)
    values = dict(_DEFAULTS[experiment])
    for k in ("betas", "n_ladder", "s_grid", "p_values", "lambdas"):
        if k in values:
            values[k] = _tuple(values[k])
    return RunConfig(experiment, tolerances=dict(TOLERANCE_KEYS[experiment]), **values)


def parse_config(data, experiment=None):
    """Build a RunConfig from a parsed TOML mapping (unknown keys are errors)."""
    unknown = set(data) - set(SCHEMA) - {"tolerances"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    name = data.get("run", {}).get("experiment", experiment)
    if name is None:
        raise ConfigError("run.experiment is required")
    exp = as_experiment(name)
    if experiment is not None and as_experiment(experiment) is not exp:
        raise ConfigError(f"run.experiment = {exp.value} does not match requested {experiment}")
    cfg = default_config(exp)
    updates = {}
    for section, keys in SCHEMA.items():
        body = data.get(section, {})
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in body.items():
            if key not in keys:
                raise ConfigError(f"unknown key {section}.{key}")
            target = keys[key]
            if target == "experiment":
                continue
            if target in ("betas", "n_ladder", "s_grid", "p_values", "lambdas"):
                value = _tuple(value)
            updates[target] = value
    tolerances = dict(cfg.tolerances)
    for key, value in data.get("tolerances", {}).items():
        if key not in tolerances:
            raise ConfigError(f"unknown key tolerances.{key} for {exp.value}")
        tolerances[key] = value
    cfg = replace(cfg, tolerances=tolerances, **updates)
    validate(cfg)
    return cfg


def load_config(path, experiment=None):
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data, experiment)


def _positive(cfg, name, value):
    if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    if not value > 0:
        raise ConfigError(f"{name} must be positive, got {value}")


def validate(cfg):
    """Named diagnostics for every invalid field."""
    for name in ("n", "ds", "delta", "n_trajectories", "threads", "block_size", "max_layers"):
        _positive(cfg, name, getattr(cfg, name))
    for name in ("n_trajectories", "threads", "block_size", "n"):
        if int(getattr(cfg, name)) != getattr(cfg, name):
            raise ConfigError(f"{name} must be an integer")
    if cfg.n_trajectories < 2:
        raise ConfigError("n_trajectories must be at least 2")
    if not 0 <= int(cfg.master_seed) < 2**64 or int(cfg.master_seed) != cfg.master_seed:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg.ds > 1e-2:
        raise ConfigError(f"ds = {cfg.ds} exceeds the guard 1e-2")
    for name in ("s_grid", "n_ladder", "betas", "p_values", "lambdas"):
        for v in getattr(cfg, name):
            _positive(cfg, name, v)
    if not cfg.s_grid or list(cfg.s_grid) != sorted(cfg.s_grid):
        raise ConfigError("s_grid must be a non-empty increasing list")
    for b in (cfg.beta, *cfg.betas):
        if b not in (1, 2, 4):
            raise ConfigError(f"beta must be 1, 2 or 4, got {b}")
    if str(cfg.policy).upper() not in ("EXP", "EULER"):
        raise ConfigError(f"policy must be EXP or EULER, got {cfg.policy!r}")
    try:
        Distribution(str(cfg.distribution).upper())
    except ValueError:
        raise ConfigError(f"unknown disorder distribution {cfg.distribution!r}") from None
    exp = cfg.experiment
    if exp is Experiment.OHM and not cfg.n_ladder:
        raise ConfigError("OHM needs sde.n_ladder")
    if exp in (Experiment.UCF, Experiment.HIERARCHY_CHECK) and not cfg.betas:
        raise ConfigError(f"{exp.value} needs sde.betas")
    if exp is Experiment.HIERARCHY_CHECK:
        if len(cfg.s_grid) != 1:
            raise ConfigError("HIERARCHY_CHECK takes a single s in sde.s_grid")
        if cfg.delta >= cfg.s_grid[0]:
            raise ConfigError("sde.delta must be smaller than s")
    if exp is Experiment.COMPARE_B2 and cfg.beta != 2:
        raise ConfigError("COMPARE_B2 is defined for beta = 2 only")
    if exp is Experiment.COVARIANCE:
        if cfg.lam is None:
            raise ConfigError("COVARIANCE needs geometry.lambda")
        cfg.geometry()
    if exp is Experiment.MICRO_SCALING:
        if len(cfg.lambdas) < 2:
            raise ConfigError("MICRO_SCALING needs at least two geometry.lambdas")
        for lam in cfg.lambdas:
            if lam > 0.5:
                raise ConfigError("geometry.lambdas must be <= 0.5")
            cfg.geometry(lam)
    return cfg
