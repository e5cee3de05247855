"""Experiment configuration: sectioned key-value text files.

A config file has up to five sections, ``[experiment]``, ``[environment]``,
``[algorithm]``, ``[model]`` and ``[metrics]``. Keys written before the first
header belong to ``[experiment]``, so a one-line file such as::

    experiment = mobile_free

is a complete config. ``experiment`` names a preset that fills every other
key; anything written explicitly overrides the preset. Keys left at
``auto`` are resolved from the algorithm and environment on load, so the
canonical form printed by :func:`dump_config` has no ``auto`` left in it.
"""
from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

from ..autodiff import ConfigurationError
from ..core import ALGORITHMS

SECTIONS = ("experiment", "environment", "algorithm", "model", "metrics")
ENV_KINDS = ("mobile", "arm", "gridworld")
GRID_SOURCES = ("projection", "unconstrained")
AUTO = "auto"


class ConfigError(ConfigurationError):
    """A config file that cannot be parsed or fails validation."""


@dataclass
class ExperimentSection:
    experiment: str = "mobile_free"
    name: str = AUTO
    seed: int = 0
    output_dir: str = AUTO


@dataclass
class EnvironmentSection:
    kind: str = "mobile"
    walls: str = "free"
    raster: int = 16
    constrained: bool = False
    map: str = "default"
    fov: int = 3
    steps: int | None = None


@dataclass
class AlgorithmSection:
    algorithm: str = "vq-elites"
    iterations: int = 3000
    population: int = 128
    archive_size: int = 2000
    n_update: int = 5
    epochs: int = 10
    n_cooperation: int | None = None
    bootstrap_count: int | None = None
    bootstrap_epochs: int = 100
    batch_size: int = 64
    p_crossover: float = 0.5
    p_mutation: float = 0.2
    sigma: float = 0.05
    store_capacity: int = 50_000
    dedup: bool | None = None
    dedup_threshold: float = 0.9
    max_size: int | None = None
    d_init: float = 1e-5
    d_min: float = 1e-5
    d_max: float | None = None
    k_csc: float | None = None
    grid: str = "projection"
    eval_workers: int = 1


@dataclass
class ModelSection:
    latent_dim: int = 2
    encoder_hidden: tuple[int, ...] = (64, 32)
    decoder_hidden: tuple[int, ...] = (32, 64)
    activation: str = "gelu"
    output_activation: str = "identity"
    beta: float = 0.25
    lr: float = 7e-4
    bounded: bool | None = None
    codebook_init: str = "kmeans"
    input_norm: str = "global"
    input_blur: float = 5.0


@dataclass
class MetricsSection:
    bins: tuple[int, ...] = (30, 30)
    interval: int = 10
    arm_epsilon: float = 0.05
    arm_samples: int = 100_000
    arm_budget: int = 10_000_000
    arm_centroids: int = 400
    arm_seed: int = 0


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    environment: EnvironmentSection = field(default_factory=EnvironmentSection)
    algorithm: AlgorithmSection = field(default_factory=AlgorithmSection)
    model: ModelSection = field(default_factory=ModelSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)

    def section(self, name: str):
        return getattr(self, name)

    @property
    def seed(self) -> int:
        return self.experiment.seed

    def config_hash(self) -> str:
        return hashlib.sha256(dump_config(self).encode()).hexdigest()


# Table I defaults per preset. Desk-scale settings are plain overrides.
_MOBILE_MODEL = {"latent_dim": 2, "encoder_hidden": (64, 32), "decoder_hidden": (32, 64),
                 "activation": "gelu", "output_activation": "identity", "input_norm": "global",
                 "input_blur": 5.0}
_ARM_MODEL = {"latent_dim": 5, "encoder_hidden": (64, 64), "decoder_hidden": (64, 64),
              "activation": "gelu", "output_activation": "identity", "input_norm": "feature",
              "input_blur": 0.0}
_GRID_MODEL = {"latent_dim": 5, "encoder_hidden": (128, 32), "decoder_hidden": (32, 128),
               "activation": "gelu", "output_activation": "identity", "input_norm": "global",
               "input_blur": 1.0}

PRESETS: dict[str, dict[str, dict[str, Any]]] = {
    "mobile_free": {
        "environment": {"kind": "mobile", "walls": "free", "raster": 16},
        "algorithm": {"iterations": 3000, "population": 128, "archive_size": 2000, "n_update": 5, "epochs": 10},
        "model": _MOBILE_MODEL,
        "metrics": {"bins": (30, 30)},
    },
    "mobile_l": {
        "environment": {"kind": "mobile", "walls": "l_shape", "raster": 16},
        "algorithm": {"iterations": 3000, "population": 128, "archive_size": 2000, "n_update": 5, "epochs": 10},
        "model": _MOBILE_MODEL,
        "metrics": {"bins": (30, 30)},
    },
    "arm": {
        "environment": {"kind": "arm", "constrained": False},
        "algorithm": {"iterations": 3000, "population": 128, "archive_size": 1500, "n_update": 5, "epochs": 10},
        "model": _ARM_MODEL,
        "metrics": {"bins": ()},
    },
    "arm_constrained": {
        "environment": {"kind": "arm", "constrained": True},
        "algorithm": {"iterations": 3000, "population": 128, "archive_size": 1500, "n_update": 5, "epochs": 10},
        "model": _ARM_MODEL,
        "metrics": {"bins": ()},
    },
    "gridworld": {
        "environment": {"kind": "gridworld", "map": "default", "fov": 3},
        "algorithm": {"iterations": 10000, "population": 128, "archive_size": 400, "n_update": 10, "epochs": 10},
        "model": _GRID_MODEL,
        "metrics": {"bins": ()},
    },
}

_SECTION_TYPES = {
    "experiment": ExperimentSection,
    "environment": EnvironmentSection,
    "algorithm": AlgorithmSection,
    "model": ModelSection,
    "metrics": MetricsSection,
}


# ------------------------------------------------------------------ parsing


def _field_kind(cls, name: str) -> str:
    ann = {f.name: f.type for f in fields(cls)}[name]
    ann = str(ann).replace(" ", "")
    for kind in ("tuple", "bool", "int", "float"):
        if ann.startswith(kind):
            return kind
    return "str"


def _parse_value(section: str, key: str, text: str, cls) -> Any:
    kind = _field_kind(cls, key)
    optional = "None" in str({f.name: f.type for f in fields(cls)}[key])
    text = text.strip()
    where = f"[{section}] {key}"
    if optional and text.lower() == AUTO:
        return None
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "tuple":
            return tuple(int(p) for p in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{where}: cannot read {text!r} as {kind}") from None
    return text


def _format_value(value: Any) -> str:
    if value is None:
        return AUTO
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(
    text: str, source: str = "<config>", overrides: Sequence[str] = ()
) -> ExperimentConfig:
    """Parse, default, resolve and validate config text.

    ``overrides`` are ``section.key=value`` strings applied on top of the
    text before ``auto`` values are resolved.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    body = text
    if not text.lstrip().startswith("["):
        body = "[experiment]\n" + text
    try:
        parser.read_string(body, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    for item in overrides:
        target, sep, value = item.partition("=")
        sec, dot, key = target.strip().partition(".")
        if not sep or not dot or not key:
            raise ConfigError(f"override {item!r}: expected section.key=value")
        if not parser.has_section(sec):
            parser.add_section(sec)
        parser.set(sec, key, value.strip())

    raw: dict[str, dict[str, str]] = {}
    for sec in parser.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{sec}]; expected one of {list(SECTIONS)}")
        raw[sec] = dict(parser.items(sec))

    preset = raw.get("experiment", {}).get("experiment", ExperimentSection.experiment).strip()
    if preset not in PRESETS:
        raise ConfigError(f"[experiment] experiment: unknown preset {preset!r}; choose from {sorted(PRESETS)}")

    cfg = ExperimentConfig()
    for sec, values in PRESETS[preset].items():
        for key, value in values.items():
            setattr(cfg.section(sec), key, value)
    for sec, values in raw.items():
        cls = _SECTION_TYPES[sec]
        names = {f.name for f in fields(cls)}
        for key, text_value in values.items():
            if key not in names:
                raise ConfigError(f"[{sec}] {key}: unknown key")
            setattr(cfg.section(sec), key, _parse_value(sec, key, text_value, cls))
    resolve_config(cfg)
    validate_config(cfg)
    return cfg


def load_config(path: str | Path, overrides: Sequence[str] = ()) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, source=str(path), overrides=overrides)


def preset_config(name: str, **overrides: dict[str, Any]) -> ExperimentConfig:
    """Config for a preset with per-section overrides, e.g.
    ``preset_config("mobile_free", algorithm={"iterations": 50})``."""
    overrides.setdefault("experiment", {})
    lines = []
    for sec in sorted(overrides, key=lambda s: s != "experiment"):
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        lines.append(f"[{sec}]")
        if sec == "experiment":
            lines.append(f"experiment = {name}")
        for key, value in overrides[sec].items():
            lines.append(f"{key} = {_format_value(value)}")
    return parse_config_text("\n".join(lines) + "\n", source=f"<preset {name}>")


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical text: every section and key in declaration order."""
    out = io.StringIO()
    for sec in SECTIONS:
        out.write(f"[{sec}]\n")
        obj = cfg.section(sec)
        for f in fields(obj):
            out.write(f"{f.name} = {_format_value(getattr(obj, f.name))}\n")
        out.write("\n")
    return out.getvalue()


# --------------------------------------------------------------- resolution


def resolve_config(cfg: ExperimentConfig) -> None:
    """Replace ``auto`` entries with values implied by algorithm and environment."""
    alg = cfg.algorithm
    env = cfg.environment
    ex = cfg.experiment
    if ex.name == AUTO:
        ex.name = f"{ex.experiment}-{alg.algorithm}"
    if alg.bootstrap_count is None:
        alg.bootstrap_count = alg.population
    if alg.dedup is None:
        alg.dedup = env.kind == "mobile"
    if alg.n_cooperation is None:
        alg.n_cooperation = alg.iterations // 10 if alg.algorithm == "aurora-dagger" else 0
    vanilla = alg.algorithm == "aurora"
    if alg.d_max is None:
        alg.d_max = 1e5 if vanilla else 1.0
    if alg.k_csc is None:
        alg.k_csc = 5e-6 if vanilla else 5e-4
    if alg.max_size is None:
        alg.max_size = int(round(2.5 * alg.archive_size))
    if cfg.model.bounded is None:
        cfg.model.bounded = not vanilla


def validate_config(cfg: ExperimentConfig) -> None:
    env, alg, model, met = cfg.environment, cfg.algorithm, cfg.model, cfg.metrics

    def positive(sec: str, key: str, value) -> None:
        if value is None or value <= 0:
            raise ConfigError(f"[{sec}] {key}: must be positive, got {value}")

    def non_negative(sec: str, key: str, value) -> None:
        if value < 0:
            raise ConfigError(f"[{sec}] {key}: must be non-negative, got {value}")

    if env.kind not in ENV_KINDS:
        raise ConfigError(f"[environment] kind: must be one of {list(ENV_KINDS)}, got {env.kind!r}")
    if env.kind == "mobile" and env.walls not in ("free", "l_shape"):
        raise ConfigError(f"[environment] walls: must be 'free' or 'l_shape', got {env.walls!r}")
    positive("environment", "raster", env.raster)
    non_negative("environment", "fov", env.fov)
    if env.steps is not None:
        positive("environment", "steps", env.steps)

    if alg.algorithm not in ALGORITHMS:
        raise ConfigError(f"[algorithm] algorithm: must be one of {list(ALGORITHMS)}, got {alg.algorithm!r}")
    for key in ("population", "archive_size", "n_update", "batch_size", "store_capacity", "max_size",
                "eval_workers"):
        positive("algorithm", key, getattr(alg, key))
    for key in ("iterations", "epochs", "n_cooperation", "bootstrap_count", "bootstrap_epochs"):
        non_negative("algorithm", key, getattr(alg, key))
    for key in ("p_crossover", "p_mutation", "dedup_threshold"):
        v = getattr(alg, key)
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"[algorithm] {key}: must lie in [0, 1], got {v}")
    non_negative("algorithm", "sigma", alg.sigma)
    if not 0 < alg.d_min <= alg.d_max:
        raise ConfigError(f"[algorithm] d_min: need 0 < d_min <= d_max, got {alg.d_min} and {alg.d_max}")
    if not alg.d_min <= alg.d_init <= alg.d_max:
        raise ConfigError(f"[algorithm] d_init: must lie in [d_min, d_max], got {alg.d_init}")
    non_negative("algorithm", "k_csc", alg.k_csc)
    if alg.grid not in GRID_SOURCES:
        raise ConfigError(f"[algorithm] grid: must be one of {list(GRID_SOURCES)}, got {alg.grid!r}")
    if alg.grid == "unconstrained" and env.kind != "arm":
        raise ConfigError("[algorithm] grid: 'unconstrained' only applies to the arm")

    positive("model", "latent_dim", model.latent_dim)
    non_negative("model", "beta", model.beta)
    positive("model", "lr", model.lr)
    non_negative("model", "input_blur", model.input_blur)
    if any(h <= 0 for h in model.encoder_hidden + model.decoder_hidden):
        raise ConfigError("[model] encoder_hidden: layer sizes must be positive")

    positive("metrics", "interval", met.interval)
    if env.kind == "mobile" and (len(met.bins) != 2 or min(met.bins) <= 0):
        raise ConfigError(f"[metrics] bins: mobile needs two positive bin counts, got {met.bins}")
    positive("metrics", "arm_epsilon", met.arm_epsilon)
    positive("metrics", "arm_centroids", met.arm_centroids)
    positive("metrics", "arm_samples", met.arm_samples)
    positive("metrics", "arm_budget", met.arm_budget)
