"""Experiment configuration files (TOML).

Every table maps onto a frozen dataclass below; unknown keys, wrong types and
missing required keys raise :class:`ConfigError` naming the field path.
``dump_config(load_config(text))`` re-parses to an equal value.
"""
from __future__ import annotations

import dataclasses
import sys
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .algorithms import LinearTdSpec, QLearningSpec, StepSchedule
from .errors import ConfigError
from .harness import EXPERIMENTS, ExperimentConfig, Thresholds
from .mdp import FeatureMap, MdpSpec, Policy, induce_chain, random_features, random_mdp
from .rng import parse_seed
from .textio import read_matrix

_REQUIRED = object()


@dataclass(frozen=True)
class ScheduleCfg:
    family: str = "inv_poly"
    nu: float = 0.8
    offset: int = 2
    c: float = 0.0

    def build(self) -> StepSchedule:
        if self.family == "inv_poly":
            return StepSchedule.inv_poly(self.nu, self.offset)
        if self.family == "constant":
            return StepSchedule.constant(self.c)
        raise ConfigError("schedule.family", f"expected 'inv_poly' or 'constant', got {self.family!r}")


@dataclass(frozen=True)
class ThresholdsCfg:
    final_error_rel: float = 0.1
    decay_factor_min: float = 4.0


@dataclass(frozen=True)
class ProblemCfg:
    kind: str = "random"            # random | explicit
    num_states: int = 0
    num_actions: int = 1
    discount: float = 0.9
    instance_seed: int = 0
    reward: tuple | None = None     # explicit: S x A
    transition: tuple | None = None  # explicit: S x A x S
    init_dist: tuple | None = None


@dataclass(frozen=True)
class FeaturesCfg:
    kind: str = "random"            # random | identity | zeros | file
    dim: int = 0
    seed: int = 0
    path: str = ""
    validate_rank: bool = True


@dataclass(frozen=True)
class PolicyCfg:
    kind: str = "uniform"           # uniform | explicit
    action_probs: tuple | None = None


@dataclass(frozen=True)
class TolerancesCfg:
    assumption_samples: int = 1000
    assumption_seed: int = 0
    anchors_M: int = 100
    mds_mc_samples: int = 10_000
    drift_floor: float = 1e-10


@dataclass(frozen=True)
class CliConfig:
    experiment: str = _REQUIRED
    seeds: tuple = _REQUIRED
    horizon: int = _REQUIRED
    problem: ProblemCfg = _REQUIRED
    experiment_id: str = ""
    num_checkpoints: int = 16
    schedule: ScheduleCfg = ScheduleCfg()
    thresholds: ThresholdsCfg = ThresholdsCfg()
    features: FeaturesCfg = FeaturesCfg()
    policy: PolicyCfg = PolicyCfg()
    tolerances: TolerancesCfg = TolerancesCfg()
    base_dir: str = field(default=".", compare=False)


_HINTS = {}


def _hints(cls):
    if cls not in _HINTS:
        _HINTS[cls] = typing.get_type_hints(cls)
    return _HINTS[cls]


def _coerce(value, tp, path: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return _coerce(value, args[0], path)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(path, "expected a table")
        return _build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if tp is tuple:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected an array, got {value!r}")
        return _freeze(value, path)
    raise TypeError(tp)


def _freeze(value, path):
    if isinstance(value, list):
        return tuple(_freeze(v, f"{path}[{i}]") for i, v in enumerate(value))
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ConfigError(path, f"unexpected array element {value!r}")
    return value


def _build(cls, data: dict, prefix: str = ""):
    hints = _hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.name != "base_dir"}
    for key in data:
        if key not in names:
            raise ConfigError(f"{prefix}{'.' if prefix else ''}{key}", "unknown key")
    kw = {}
    for f in dataclasses.fields(cls):
        if f.name == "base_dir":
            continue
        path = f"{prefix}{'.' if prefix else ''}{f.name}"
        if f.name in data:
            kw[f.name] = _coerce(data[f.name], hints[f.name], path)
        elif f.default is _REQUIRED:
            raise ConfigError(path, "missing required key")
    return cls(**kw)


def _thaw(v):
    if isinstance(v, tuple):
        return [_thaw(x) for x in v]
    return v


def config_to_dict(cfg: CliConfig) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        if f.name == "base_dir":
            continue
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            sub = {k: _thaw(x) for k, x in dataclasses.asdict(v).items() if x is not None}
            out[f.name] = sub
        else:
            out[f.name] = _thaw(v)
    return out


def dump_config(cfg: CliConfig) -> str:
    d = config_to_dict(cfg)
    d["seeds"] = [str(s) for s in d["seeds"]]  # 64-bit seeds do not fit TOML integers
    return tomli_w.dumps(d)


def load_config(text: str, base_dir=".") -> CliConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("", f"TOML syntax error: {exc}") from None
    if "seeds" in data and isinstance(data["seeds"], list):
        try:
            data["seeds"] = [str(parse_seed(s)) for s in data["seeds"]]
        except (ValueError, TypeError) as exc:
            raise ConfigError("seeds", str(exc)) from None
    cfg = _build(CliConfig, data)
    cfg = dataclasses.replace(cfg, seeds=tuple(parse_seed(s) for s in cfg.seeds), base_dir=str(base_dir))
    validate_config(cfg)
    return cfg


def read_config(path) -> CliConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("", f"config file {str(path)!r} does not exist")
    return load_config(path.read_text(), base_dir=path.parent)


def validate_config(cfg: CliConfig) -> None:
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"expected one of {', '.join(EXPERIMENTS)}, got {cfg.experiment!r}")
    if len(cfg.seeds) < 2:
        raise ConfigError("seeds", "at least 2 seeds are required")
    if cfg.horizon < 0:
        raise ConfigError("horizon", "must be nonnegative")
    if cfg.num_checkpoints < 2:
        raise ConfigError("num_checkpoints", "must be >= 2")
    if cfg.schedule.family not in ("inv_poly", "constant"):
        raise ConfigError("schedule.family", f"expected 'inv_poly' or 'constant', got {cfg.schedule.family!r}")
    p = cfg.problem
    if p.kind == "random":
        if p.num_states < 1 or p.num_actions < 1:
            raise ConfigError("problem.num_states", "random problems need num_states >= 1 and num_actions >= 1")
    elif p.kind == "explicit":
        if p.reward is None or p.transition is None:
            raise ConfigError("problem.reward", "explicit problems need reward and transition arrays")
    else:
        raise ConfigError("problem.kind", f"expected 'random' or 'explicit', got {p.kind!r}")
    if not 0.0 <= p.discount < 1.0:
        raise ConfigError("problem.discount", "must lie in [0, 1)")
    if cfg.experiment.startswith("td"):
        fk = cfg.features.kind
        if fk not in ("random", "identity", "zeros", "file"):
            raise ConfigError("features.kind", f"unknown feature kind {fk!r}")
        if fk in ("random", "zeros") and cfg.features.dim < 1:
            raise ConfigError("features.dim", "must be >= 1")
        if fk == "file" and not (Path(cfg.base_dir) / cfg.features.path).is_file():
            raise ConfigError("features.path", f"file {cfg.features.path!r} does not exist")
    if cfg.policy.kind not in ("uniform", "explicit"):
        raise ConfigError("policy.kind", f"expected 'uniform' or 'explicit', got {cfg.policy.kind!r}")
    if cfg.policy.kind == "explicit" and cfg.policy.action_probs is None:
        raise ConfigError("policy.action_probs", "required for an explicit policy")


def with_seed_override(cfg: CliConfig, seed) -> CliConfig:
    """Replace the seed list by ``seed, seed + 1, ...`` keeping its length."""
    base = parse_seed(seed)
    return dataclasses.replace(cfg, seeds=tuple((base + i) % 2 ** 64 for i in range(len(cfg.seeds))))


def build_mdp(cfg: CliConfig) -> MdpSpec:
    p = cfg.problem
    try:
        if p.kind == "random":
            return random_mdp(p.num_states, p.num_actions, p.discount, p.instance_seed)
        r = np.array(p.reward, dtype=float)
        init = np.full(r.shape[0], 1.0 / r.shape[0]) if p.init_dist is None else np.array(p.init_dist, dtype=float)
        return MdpSpec(r, np.array(p.transition, dtype=float), p.discount, init)
    except ValueError as exc:
        raise ConfigError("problem", str(exc)) from None


def build_policy(cfg: CliConfig, mdp: MdpSpec) -> Policy:
    if cfg.policy.kind == "uniform":
        return Policy.uniform(mdp.num_states, mdp.num_actions)
    try:
        pol = Policy(np.array(cfg.policy.action_probs, dtype=float))
    except ValueError as exc:
        raise ConfigError("policy.action_probs", str(exc)) from None
    if pol.action_probs.shape != mdp.reward.shape:
        raise ConfigError("policy.action_probs", "shape must be num_states x num_actions")
    return pol


def build_features(cfg: CliConfig, num_states: int) -> FeatureMap:
    f = cfg.features
    if f.kind == "random":
        return random_features(num_states, f.dim, f.seed)
    if f.kind == "identity":
        return FeatureMap(np.eye(num_states))
    if f.kind == "zeros":
        return FeatureMap(np.zeros((num_states, f.dim)))
    X = read_matrix(Path(cfg.base_dir) / f.path, square=False)
    if X.shape[0] != num_states:
        raise ConfigError("features.path", f"feature matrix has {X.shape[0]} rows, expected {num_states}")
    return FeatureMap(X)


def build_experiment(cfg: CliConfig) -> ExperimentConfig:
    """Materialize the problem instance and harness configuration."""
    mdp = build_mdp(cfg)
    pol = build_policy(cfg, mdp)
    sched = cfg.schedule.build()
    if cfg.experiment.startswith("td"):
        chain = induce_chain(mdp, pol)
        problem = LinearTdSpec(chain, build_features(cfg, mdp.num_states), sched,
                               strict=cfg.features.validate_rank)
    else:
        problem = QLearningSpec(mdp, pol, sched)
    th = Thresholds(cfg.thresholds.final_error_rel, cfg.thresholds.decay_factor_min)
    return ExperimentConfig(cfg.experiment, problem, cfg.seeds, cfg.horizon, th, cfg.num_checkpoints,
                            cfg.experiment_id or cfg.experiment, mdp.init_dist,
                            cfg.tolerances.assumption_samples, cfg.tolerances.assumption_seed)
