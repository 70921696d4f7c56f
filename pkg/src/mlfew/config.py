"""Run configuration: dataclass, key=value file round-trip, validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .heads import HEAD_KINDS


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    """Everything a train or eval run needs, mirrored by CLI flags.

    ``data`` points at a JSONL dataset; when it is None the synth_* fields
    describe a generated dataset instead.
    """

    command: str = "train"
    data: str | None = None
    head: str = "proto"
    way: int = 5
    shot: int = 1
    query_count: int | None = None  # None means way // 2
    episodes: int = 10000
    eval_episodes: int = 1000
    seed: int = 0
    nlc: bool = False
    count_weight: float = 0.01
    alpha: float = 0.99
    sigma_rbf: float = 1.0
    k_nn: int | None = None  # None means min(10, nodes - 1)
    relation_mode: str = "bce"
    embed_dim: int = 32
    hidden_dim: int = 64
    learning_rate: float = 0.001
    halve_every: int = 10000
    train_fraction: float = 0.5
    val_fraction: float = 0.2
    checkpoint: str | None = None
    out: str | None = None
    synth_classes: int = 10
    synth_dim: int = 8
    synth_samples_per_class: int = 50
    synth_max_labels: int = 2
    synth_separation: float = 1.0
    synth_noise: float = 0.25
    synth_cooccurrence: float = 0.0

    def validate(self):
        if self.head not in HEAD_KINDS:
            raise ConfigError(f"head must be one of {HEAD_KINDS}, got {self.head!r}")
        if self.way < 2:
            raise ConfigError("way must be at least 2")
        if self.shot < 1:
            raise ConfigError("shot must be at least 1")
        if self.count_weight < 0:
            raise ConfigError("lambda must be non-negative")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError("alpha must lie in [0, 1)")
        if self.sigma_rbf <= 0:
            raise ConfigError("sigma must be positive")
        if self.episodes < 0 or self.eval_episodes < 1:
            raise ConfigError("episode counts out of range")
        if self.query_count is not None and self.query_count < 1:
            raise ConfigError("query count must be at least 1")
        if self.relation_mode not in ("bce", "mse"):
            raise ConfigError("relation mode must be 'bce' or 'mse'")
        if not (0 < self.train_fraction < 1 and 0 < self.val_fraction < 1):
            raise ConfigError("split fractions must lie in (0, 1)")
        if self.train_fraction + self.val_fraction >= 1:
            raise ConfigError("split fractions must sum below 1")
        return self

    def resolved_query_count(self) -> int:
        return self.query_count if self.query_count is not None else max(1, self.way // 2)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _parse_value(name: str, text: str):
    field = _FIELDS[name]
    text = text.strip()
    if text.lower() == "none":
        return None
    kind = field.type
    if kind == "bool":
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {text!r}")
    if kind in ("int", "int | None"):
        return int(text)
    if kind == "float":
        return float(text)
    return text


def read_config_file(path: str) -> dict:
    """Parse a key=value config file into an override dict."""
    overrides = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in _FIELDS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                overrides[key] = _parse_value(key, value)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    return overrides


def write_config_file(config: RunConfig, path: str):
    with open(path, "w") as fh:
        for field in dataclasses.fields(RunConfig):
            value = getattr(config, field.name)
            if value is None:
                text = "none"
            elif isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            fh.write(f"{field.name} = {text}\n")


def build_config(file_path: str | None = None, **overrides) -> RunConfig:
    """Assemble a config from defaults, an optional file, then overrides."""
    values = {}
    if file_path is not None:
        values.update(read_config_file(file_path))
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown config field {key!r}")
        values[key] = value
    return RunConfig(**values).validate()
