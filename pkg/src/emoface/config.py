"""Flat key=value run configuration with typed validation.

One ``RunConfig`` drives every pipeline stage. Keys are ``section.field``
(``seed`` is bare); sections map onto the per-module hyperparameter
dataclasses plus dataset and evaluation settings. The canonical text render
is byte-stable, hashed into artifact snapshots, and doubles as the defaults
reference file.
"""

from __future__ import annotations

import hashlib
import typing
from dataclasses import dataclass, fields, replace

from .embedding import DeeConfig
from .features import FeatConfig
from .generator import GenConfig
from .prior import PriorConfig


class ConfigError(ValueError):
    """Malformed key, unknown field, or untypeable value."""


@dataclass(frozen=True)
class DataConfig:
    n_train: int = 512
    n_val: int = 128
    duration_min: float = 2.2
    duration_max: float = 3.2
    intensity_min: float = 0.5
    intensity_max: float = 1.0


@dataclass(frozen=True)
class EvalConfig:
    alpha: float = 1.0
    tau_t: float = 1.0
    tau_b: float = 1.0
    diversity_k: int = 10
    diversity_inputs: int = 16
    swap_pairs: int = 50


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DataConfig = DataConfig()
    dee: DeeConfig = DeeConfig()
    prior: PriorConfig = PriorConfig()
    gen: GenConfig = GenConfig()
    feat: FeatConfig = FeatConfig()
    eval: EvalConfig = EvalConfig()


_SECTIONS: dict[str, type] = {
    "data": DataConfig,
    "dee": DeeConfig,
    "prior": PriorConfig,
    "gen": GenConfig,
    "feat": FeatConfig,
    "eval": EvalConfig,
}


def _field_types(cls) -> dict[str, type]:
    return typing.get_type_hints(cls)


def _coerce(section: str, name: str, ftype: type, raw: str):
    raw = raw.strip()
    try:
        if ftype is int:
            if "." in raw or "e" in raw.lower():
                raise ValueError("not an integer")
            return int(raw)
        if ftype is float:
            return float(raw)
        if ftype is bool:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError("not a boolean")
        if ftype is str:
            return raw
    except ValueError as exc:
        raise ConfigError(f"{section}.{name}: cannot parse {raw!r} as {ftype.__name__}: {exc}") from None
    raise ConfigError(f"{section}.{name}: unsupported field type {ftype!r}")


def parse_items(items: list[tuple[str, str]], base: RunConfig = RunConfig()) -> RunConfig:
    """Apply ``(key, value)`` pairs on top of a base configuration."""
    cfg = base
    for key, raw in items:
        key = key.strip()
        if key == "seed":
            cfg = replace(cfg, seed=_coerce("", "seed", int, raw))
            continue
        if "." not in key:
            raise ConfigError(f"key {key!r} must be 'seed' or 'section.field'")
        section, _, name = key.partition(".")
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section {section!r} in key {key!r}; sections: {sorted(_SECTIONS)}")
        cls = _SECTIONS[section]
        types = _field_types(cls)
        if name not in types:
            raise ConfigError(f"unknown field {name!r} in section {section!r}; fields: {sorted(types)}")
        value = _coerce(section, name, types[name], raw)
        cfg = replace(cfg, **{section: replace(getattr(cfg, section), **{name: value})})
    return cfg


def parse_config(text: str, base: RunConfig = RunConfig()) -> RunConfig:
    items = []
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected key=value, got {body!r}")
        key, _, value = body.partition("=")
        items.append((key, value))
    return parse_items(items, base)


def load_config(path, base: RunConfig = RunConfig()) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), base)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    items = []
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} must be key=value")
        key, _, value = ov.partition("=")
        items.append((key, value))
    return parse_items(items, cfg)


def config_text(cfg: RunConfig) -> str:
    """Canonical byte-stable rendering; also the defaults reference format."""
    lines = [f"seed={cfg.seed}"]
    for section in sorted(_SECTIONS):
        obj = getattr(cfg, section)
        for f in fields(obj):
            lines.append(f"{section}.{f.name}={getattr(obj, f.name)!r}".replace("'", ""))
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(config_text(cfg).encode()).hexdigest()[:16]


def defaults_reference() -> str:
    """Every key with its default value and type, one per line."""
    out = ["# key=default  (type)", "seed=0  (int)"]
    for section in sorted(_SECTIONS):
        cls = _SECTIONS[section]
        types = _field_types(cls)
        obj = cls()
        for f in fields(cls):
            out.append(f"{section}.{f.name}={getattr(obj, f.name)!r}  ({types[f.name].__name__})".replace("'", ""))
    return "\n".join(out) + "\n"
