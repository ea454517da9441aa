"""Experiment configuration: strict sectioned key=value files.

A config file has six sections ([dataset], [sampler], [diffusion],
[reverse], [classifier], [run]); every key has a default, so the empty
string is a valid config. Unknown sections and unknown or duplicate keys
are errors rather than warnings, so a typo cannot silently fall back to a
default. Every parsed config exposes a canonical serialization (defaults
filled in, fixed ordering) whose SHA-256 digest fingerprints the run:
artifacts stamped with equal fingerprints came from equal settings.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable

try:  # importlib.resources.files needs 3.9+; abc registration 3.10+
    from importlib.resources import files as _resource_files
except ImportError:  # pragma: no cover
    _resource_files = None

__all__ = [
    "ConfigError",
    "DatasetSection",
    "SamplerSection",
    "DiffusionSection",
    "ReverseSection",
    "ClassifierSection",
    "RunSection",
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "preset_names",
    "preset_text",
    "MODES",
]

MODES = ("full", "no_diffusion", "no_fairness")
SOURCES = ("sbm", "files")


class ConfigError(ValueError):
    """Malformed config text, unknown key, or out-of-range value."""


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1"):
        return True
    if low in ("false", "0"):
        return False
    raise ValueError(f"expected true/false, got {raw!r}")


def _seeds(raw: str) -> tuple[int, ...]:
    parts = [p for chunk in raw.split(",") for p in chunk.split()]
    return tuple(int(p) for p in parts)


def _choice(options: tuple[str, ...]) -> Callable[[str], str]:
    def parse(raw: str) -> str:
        value = raw.strip()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {raw!r}")
        return value

    return parse


@dataclass(frozen=True)
class _Key:
    parse: Callable[[str], object]
    default: object
    check: Callable[[object], bool] = lambda v: True
    rule: str = ""


def _unit(v) -> bool:
    return 0.0 <= v <= 1.0


_SCHEMA: dict[str, dict[str, _Key]] = {
    "dataset": {
        "source": _Key(_choice(SOURCES), "sbm"),
        "nodes": _Key(str.strip, ""),
        "edges": _Key(str.strip, ""),
        "splits": _Key(str.strip, ""),
        "include_sensitive": _Key(_bool, False),
        "standardize": _Key(_bool, True),
        "n_nodes": _Key(int, 300, lambda v: v >= 4, ">= 4"),
        "n_features": _Key(int, 8, lambda v: v >= 1, ">= 1"),
        "group_fraction": _Key(float, 0.5, _unit, "in [0, 1]"),
        "homophily": _Key(float, 0.05, _unit, "in [0, 1]"),
        "cross_prob": _Key(float, 0.05, _unit, "in [0, 1]"),
        "label_bias": _Key(float, 0.0, lambda v: -1.0 <= v <= 1.0, "in [-1, 1]"),
        "feature_leak": _Key(float, 0.0, lambda v: v >= 0.0, ">= 0"),
        "train_frac": _Key(float, 0.2, _unit, "in [0, 1]"),
        "val_frac": _Key(float, 0.35, _unit, "in [0, 1]"),
        "test_frac": _Key(float, 0.45, _unit, "in [0, 1]"),
    },
    "sampler": {
        "depth": _Key(int, 2, lambda v: v >= 0, ">= 0"),
        "fanout": _Key(int, 10, lambda v: v >= 1, ">= 1"),
        "n_roots": _Key(int, 0, lambda v: v >= 0, ">= 0 (0 means every node)"),
    },
    "diffusion": {
        "beta_min": _Key(float, 0.1, lambda v: v > 0.0, "> 0"),
        "beta_max": _Key(float, 1.0, lambda v: v > 0.0, "> 0"),
        "lambda_x": _Key(float, 0.1, lambda v: v >= 0.0, ">= 0"),
        "lambda_a": _Key(float, 0.1, lambda v: v >= 0.0, ">= 0"),
        "maxiters": _Key(int, 1000, lambda v: v >= 0, ">= 0"),
        "lr": _Key(float, 1e-2, lambda v: v > 0.0, "> 0"),
        "weight_decay": _Key(float, 1e-4, lambda v: v >= 0.0, ">= 0"),
        "clip_norm": _Key(float, 100.0, lambda v: v > 0.0, "> 0"),
        "adversary_epochs": _Key(int, 500, lambda v: v >= 0, ">= 0"),
        "adversary_lr": _Key(float, 1e-4, lambda v: v > 0.0, "> 0"),
        "adversary_dropout": _Key(float, 0.1, lambda v: 0.0 <= v < 1.0, "in [0, 1)"),
    },
    "reverse": {
        "n_steps": _Key(int, 5, lambda v: v >= 1, ">= 1"),
        "r_x": _Key(float, 0.05, lambda v: v >= 0.0, ">= 0"),
        "r_a": _Key(float, 0.05, lambda v: v >= 0.0, ">= 0"),
        "tau": _Key(float, 0.5, _unit, "in [0, 1]"),
    },
    "classifier": {
        "hidden": _Key(int, 64, lambda v: v >= 1, ">= 1"),
        "dropout": _Key(float, 0.3, lambda v: 0.0 <= v < 1.0, "in [0, 1)"),
        "epochs": _Key(int, 500, lambda v: v >= 0, ">= 0"),
        "lr": _Key(float, 1e-3, lambda v: v > 0.0, "> 0"),
        "weight_decay": _Key(float, 1e-4, lambda v: v >= 0.0, ">= 0"),
    },
    "run": {
        "mode": _Key(_choice(MODES), "full"),
        "seeds": _Key(_seeds, (0, 1, 2, 3, 4)),
    },
}


@dataclass(frozen=True)
class DatasetSection:
    source: str
    nodes: str
    edges: str
    splits: str
    include_sensitive: bool
    standardize: bool
    n_nodes: int
    n_features: int
    group_fraction: float
    homophily: float
    cross_prob: float
    label_bias: float
    feature_leak: float
    train_frac: float
    val_frac: float
    test_frac: float


@dataclass(frozen=True)
class SamplerSection:
    depth: int
    fanout: int
    n_roots: int


@dataclass(frozen=True)
class DiffusionSection:
    beta_min: float
    beta_max: float
    lambda_x: float
    lambda_a: float
    maxiters: int
    lr: float
    weight_decay: float
    clip_norm: float
    adversary_epochs: int
    adversary_lr: float
    adversary_dropout: float


@dataclass(frozen=True)
class ReverseSection:
    n_steps: int
    r_x: float
    r_a: float
    tau: float


@dataclass(frozen=True)
class ClassifierSection:
    hidden: int
    dropout: float
    epochs: int
    lr: float
    weight_decay: float


@dataclass(frozen=True)
class RunSection:
    mode: str
    seeds: tuple[int, ...]


_SECTION_TYPES = {
    "dataset": DatasetSection,
    "sampler": SamplerSection,
    "diffusion": DiffusionSection,
    "reverse": ReverseSection,
    "classifier": ClassifierSection,
    "run": RunSection,
}


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment settings (defaults filled in)."""

    dataset: DatasetSection
    sampler: SamplerSection
    diffusion: DiffusionSection
    reverse: ReverseSection
    classifier: ClassifierSection
    run: RunSection

    def canonical_text(self) -> str:
        """Deterministic serialization: schema order, normalized values."""
        lines = []
        for name in _SECTION_TYPES:
            section = getattr(self, name)
            lines.append(f"[{name}]")
            for f in fields(section):
                lines.append(f"{f.name} = {_format_value(getattr(section, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def fingerprint(self) -> str:
        """SHA-256 hex digest of the canonical serialization."""
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()


def _cross_checks(cfg: ExperimentConfig) -> None:
    ds, diff, run = cfg.dataset, cfg.diffusion, cfg.run
    total = ds.train_frac + ds.val_frac + ds.test_frac
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"dataset split fractions must sum to 1, got {total}")
    if ds.source == "files":
        for key in ("nodes", "edges"):
            if not getattr(ds, key):
                raise ConfigError(f"dataset.source=files requires dataset.{key}")
    if diff.beta_min >= diff.beta_max:
        raise ConfigError(
            f"diffusion.beta_min must be < beta_max, got {diff.beta_min} >= {diff.beta_max}"
        )
    if not run.seeds:
        raise ConfigError("run.seeds must list at least one seed")
    if any(s < 0 for s in run.seeds):
        raise ConfigError("run.seeds must be non-negative")


def parse_config(text: str) -> ExperimentConfig:
    """Parse config text, filling defaults and validating every field."""
    parser = configparser.ConfigParser(
        interpolation=None, strict=True, empty_lines_in_values=False
    )
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from exc
    if parser.defaults():
        raise ConfigError("unknown section [DEFAULT]")
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    built = {}
    for section, keys in _SCHEMA.items():
        values = {}
        for key, spec in keys.items():
            if parser.has_option(section, key):
                raw = parser.get(section, key)
                try:
                    value = spec.parse(raw)
                except ValueError as exc:
                    raise ConfigError(f"[{section}] {key}: {exc}") from exc
            else:
                value = spec.default
            if not spec.check(value):
                raise ConfigError(f"[{section}] {key}: must be {spec.rule}, got {value}")
            values[key] = value
        built[section] = _SECTION_TYPES[section](**values)
    cfg = ExperimentConfig(**built)
    _cross_checks(cfg)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and parse a config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())


def preset_names() -> tuple[str, ...]:
    """Names of the bundled preset configs (pass to preset_text)."""
    root = _resource_files("fairdiff") / "presets"
    return tuple(sorted(p.name[: -len(".cfg")] for p in root.iterdir() if p.name.endswith(".cfg")))


def preset_text(name: str) -> str:
    """Contents of a bundled preset config by name (e.g. 'sbm-smoke')."""
    resource = _resource_files("fairdiff") / "presets" / f"{name}.cfg"
    try:
        return resource.read_text()
    except (FileNotFoundError, OSError) as exc:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}") from exc
