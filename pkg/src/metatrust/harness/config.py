"""Experiment configuration: YAML schema, profiles and validation.

Schema (every key optional except where a profile supplies it)::

    name: str                     # experiment directory name
    env: pointmass1d | pendulum | collapse_valley
    failure_threshold: float      # overrides the environment default
    base_lr: float                # alpha_0
    total_steps: int              # environment steps per run
    seeds: int | [int, ...]       # count (0..n-1) or explicit list
    master_seed: int
    workers: int
    out: str
    variants: [kind | {kind, eta_up, eta_down, decay, kappa}, ...]
    corruption: {mode, p_start, p_end, xi, total_steps}
    controller: {tau0, tau_min, c_max, smoothing, window}
    learner: {gamma, lam, clip_eps, epochs, minibatch, rollout_length,
              vf_coef, ent_coef, clip_value, hidden, sigma_ref,
              init_log_std, max_grad_norm}
    eval: {every, episodes, tail_fraction}
    bootstrap_resamples: int

Unknown keys at any level raise :class:`ConfigError` naming the dotted key.
"""
from __future__ import annotations

import copy
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from metatrust.baselines import ControllerVariant
from metatrust.envs import ENV_SPECS, CorruptionScheme, EnvSpec, get_spec
from metatrust.errors import ConfigError
from metatrust.learner import PPOConfig
from metatrust.trust import ControllerConfig


@dataclass(frozen=True)
class EvalConfig:
    every: int = 10
    episodes: int = 5
    tail_fraction: float = 0.1


_TOP_KEYS = {
    "name", "env", "failure_threshold", "base_lr", "total_steps", "seeds", "master_seed",
    "workers", "out", "variants", "corruption", "controller", "learner", "eval", "bootstrap_resamples",
}
_VARIANT_KEYS = {"kind", "eta_up", "eta_down", "decay", "kappa"}
_CORRUPTION_KEYS = {"mode", "p_start", "p_end", "p", "xi", "total_steps"}

PROFILES: dict[str, dict[str, Any]] = {
    "desk": {
        "name": "desk",
        "env": "pointmass1d",
        "total_steps": 20_000,
        "seeds": 5,
        "variants": ["full_meta"],
    },
    "full": {
        "name": "full",
        "env": "collapse_valley",
        "total_steps": 120_000,
        "seeds": 5,
        "variants": ["base", "sched", "elastic", "failsafe_no_recovery", "full_meta"],
    },
}


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    env: str = "pointmass1d"
    failure_threshold: float | None = None
    base_lr: float = 0.01
    total_steps: int = 20_000
    seeds: list[int] = field(default_factory=lambda: list(range(5)))
    master_seed: int = 0
    workers: int = 1
    out: str = "runs"
    variants: list[ControllerVariant] = field(default_factory=lambda: [ControllerVariant("full_meta")])
    corruption: CorruptionScheme = field(default_factory=lambda: CorruptionScheme.stationary(0.5, 10.0, 20_000))
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    learner: PPOConfig = field(default_factory=PPOConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    bootstrap_resamples: int = 1000

    @property
    def n_iterations(self) -> int:
        return self.total_steps // self.learner.rollout_length

    @property
    def env_spec(self) -> EnvSpec:
        return get_spec(self.env, self.failure_threshold)

    def echo(self) -> dict:
        """Every effective value; ``from_dict(echo())`` reproduces the config."""
        d = {
            "name": self.name,
            "env": self.env,
            "failure_threshold": self.env_spec.failure_threshold,
            "base_lr": self.base_lr,
            "total_steps": self.total_steps,
            "seeds": list(self.seeds),
            "master_seed": self.master_seed,
            "workers": self.workers,
            "out": self.out,
            "variants": [asdict(v) for v in self.variants],
            "corruption": asdict(self.corruption),
            "controller": asdict(self.controller),
            "learner": {**asdict(self.learner), "hidden": list(self.learner.hidden)},
            "eval": asdict(self.eval),
            "bootstrap_resamples": self.bootstrap_resamples,
        }
        return d


def _check_keys(d: dict, allowed: set, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(d).__name__}")
    unknown = sorted(set(d) - allowed)
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown config key {prefix}{unknown[0]!r}; allowed: {sorted(allowed)}")


def _build(cls, d: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    _check_keys(d, allowed, where)
    try:
        return cls(**d)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _parse_seeds(value) -> list[int]:
    if isinstance(value, bool):
        raise ConfigError("seeds: expected an integer count or a list of integers")
    if isinstance(value, int):
        if value < 1:
            raise ConfigError("seeds: count must be positive")
        return list(range(value))
    if isinstance(value, str):
        value = value.strip()
        if "," in value or value.startswith("["):
            return _parse_seeds([int(s) for s in value.strip("[]").split(",") if s.strip()])
        return _parse_seeds(int(value))
    if isinstance(value, (list, tuple)) and value and all(isinstance(s, int) and s >= 0 for s in value):
        if len(set(value)) != len(value):
            raise ConfigError("seeds: duplicate seed in list")
        return list(value)
    raise ConfigError(f"seeds: expected a positive count or a list of nonnegative integers, got {value!r}")


def _parse_variant(v, i: int) -> ControllerVariant:
    where = f"variants[{i}]"
    if isinstance(v, str):
        v = {"kind": v}
    _check_keys(v, _VARIANT_KEYS, where)
    try:
        return ControllerVariant(**v)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def from_dict(raw: dict, *, warn: bool = True) -> ExperimentConfig:
    raw = copy.deepcopy(raw or {})
    _check_keys(raw, _TOP_KEYS, "")
    cfg = ExperimentConfig()
    for key in ("name", "env", "out"):
        if key in raw:
            setattr(cfg, key, str(raw[key]))
    if cfg.env not in ENV_SPECS:
        raise ConfigError(f"env: unknown environment {cfg.env!r}; choose from {sorted(ENV_SPECS)}")
    for key, typ in (("total_steps", int), ("master_seed", int), ("workers", int), ("bootstrap_resamples", int)):
        if key in raw:
            val = raw[key]
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(f"{key}: expected an integer, got {val!r}")
            setattr(cfg, key, typ(val))
    for key in ("base_lr", "failure_threshold"):
        if key in raw and raw[key] is not None:
            try:
                setattr(cfg, key, float(raw[key]))
            except (TypeError, ValueError):
                raise ConfigError(f"{key}: expected a number, got {raw[key]!r}") from None
    if "seeds" in raw:
        cfg.seeds = _parse_seeds(raw["seeds"])
    if "variants" in raw:
        vs = raw["variants"]
        if isinstance(vs, (str, dict)):
            vs = [vs]
        cfg.variants = [_parse_variant(v, i) for i, v in enumerate(vs)]
        kinds = [v.kind for v in cfg.variants]
        if len(set(kinds)) != len(kinds):
            raise ConfigError(f"variants: duplicate kind in {kinds}")
    if "learner" in raw:
        lr = dict(raw["learner"] or {})
        if "hidden" in lr:
            lr["hidden"] = tuple(int(h) for h in lr["hidden"])
        cfg.learner = _build(PPOConfig, lr, "learner")
    if "controller" in raw:
        cfg.controller = _build(ControllerConfig, raw["controller"] or {}, "controller")
    if "eval" in raw:
        cfg.eval = _build(EvalConfig, raw["eval"] or {}, "eval")
    corr = dict(raw.get("corruption") or {})
    _check_keys(corr, _CORRUPTION_KEYS, "corruption")
    if "p" in corr:
        p = corr.pop("p")
        corr.setdefault("p_start", p)
        corr.setdefault("p_end", p)
    corr.setdefault("total_steps", cfg.total_steps)
    cfg.corruption = _build(CorruptionScheme, corr, "corruption")
    validate(cfg, warn=warn)
    return cfg


def validate(cfg: ExperimentConfig, *, warn: bool = True) -> ExperimentConfig:
    if cfg.base_lr <= 0:
        raise ConfigError(f"base_lr: must be positive, got {cfg.base_lr}")
    if cfg.workers < 1:
        raise ConfigError("workers: must be at least 1")
    try:
        cfg.learner.validate()
    except ConfigError as exc:
        raise ConfigError(f"learner: {exc}") from None
    if cfg.total_steps < cfg.learner.rollout_length:
        raise ConfigError(
            f"total_steps: {cfg.total_steps} is shorter than one rollout ({cfg.learner.rollout_length})"
        )
    with warnings.catch_warnings():
        if not warn:
            warnings.simplefilter("ignore")
        try:
            cfg.controller.validate()
        except ConfigError as exc:
            raise ConfigError(f"controller: {exc}") from None
        for v in cfg.variants:
            if warn and v.kind == "full_meta" and v.eta_up > v.eta_down:
                warnings.warn(
                    f"full_meta with eta_up={v.eta_up} > eta_down={v.eta_down}: trust recovers faster than it decays",
                    stacklevel=3,
                )
    if cfg.eval.every < 1 or cfg.eval.episodes < 1:
        raise ConfigError("eval: every and episodes must be positive")
    if not 0.0 < cfg.eval.tail_fraction <= 1.0:
        raise ConfigError("eval: tail_fraction must lie in (0, 1]")
    if cfg.bootstrap_resamples < 1:
        raise ConfigError("bootstrap_resamples: must be positive")
    return cfg


def profile(name: str) -> dict:
    try:
        return copy.deepcopy(PROFILES[name])
    except KeyError:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None


def load_config(path: str | Path | None = None, *, profile_name: str | None = None, overrides: dict | None = None,
                warn: bool = True) -> ExperimentConfig:
    """Read a YAML config, layered over an optional named profile and CLI overrides."""
    raw: dict = profile(profile_name) if profile_name else {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: parse error: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        raw.update(data)
    raw.update(overrides or {})
    try:
        return from_dict(raw, warn=warn)
    except ConfigError as exc:
        where = f"{path}: " if path is not None else ""
        raise ConfigError(f"{where}{exc}") from None
