"""Run configuration: defaults, ``key = value`` files and flag overrides.

Precedence is flags over file over defaults. A config file looks like::

    # comments start with '#'
    variant = with_decoder
    hidden_dim = 200
    tie_embeddings = true
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

VARIANTS = ("with_decoder", "without_decoder")
SEED_ENV = "BIMODEL_SEED"


class ConfigError(ValueError):
    pass


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from None


@dataclass
class RunConfig:
    variant: str = "with_decoder"
    hidden_dim: int = 200
    num_layers: int = 2
    embed_dim: int = 300
    label_embed_dim: int = 50
    batch_size: int = 16
    learning_rate: float = 1e-3
    max_epochs: int = 50
    patience: int = 10
    seed: int = dataclasses.field(default_factory=default_seed)
    clip_norm: float = 5.0
    tie_embeddings: bool = True
    refresh_h1: bool = True
    share_states: bool = True
    min_freq: int = 1
    dev_split: int = 500
    normalize_digits: bool = False
    lowercase: bool = True
    strict_chunks: bool = False
    corpus_format: str = ""
    train_path: str = ""
    dev_path: str = ""
    test_path: str = ""
    checkpoint_path: str = "bimodel.ckpt"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("hidden_dim", "num_layers", "embed_dim", "label_embed_dim", "batch_size", "max_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.patience < 0 or self.dev_split < 0 or self.min_freq < 1:
            raise ConfigError("patience and dev_split must be >= 0, min_freq >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")

    @property
    def with_decoder(self) -> bool:
        return self.variant == "with_decoder"

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any], base: "RunConfig | None" = None) -> "RunConfig":
        base = base or cls()
        known = {f.name: f for f in fields(cls)}
        changes = {}
        for key, raw in values.items():
            name = key.replace("-", "_")
            if name not in known:
                raise ConfigError(f"unknown config key {key!r}")
            changes[name] = _coerce(name, raw, type(getattr(base, name)))
        return dataclasses.replace(base, **changes)


def _coerce(name: str, raw: Any, kind: type) -> Any:
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind.__name__}") from None
    return text


def parse_config_text(text: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_config(path: str | os.PathLike | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        cfg = RunConfig.from_mapping(parse_config_text(p.read_text(encoding="utf-8")), cfg)
    if overrides:
        cfg = RunConfig.from_mapping(overrides, cfg)
    return cfg
