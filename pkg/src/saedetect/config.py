"""Pipeline configuration: defaults, flat JSON config files, CLI overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .autoencoder import Hyperparams
from .features import N_FEATURES
from .synthetic import (
    REFERENCE_CORPUS_SEED,
    REFERENCE_FLOWS_PER_DEVICE,
    REFERENCE_MALICIOUS_FLOWS,
    REFERENCE_TRAIN_SEED,
)

MODELS_DIR_ENV = "SAEDETECT_MODELS_DIR"


class ConfigError(Exception):
    """Bad configuration file or flag values."""


@dataclass
class PipelineConfig:
    timeout_seconds: float = 60.0
    n_packets: int = 3
    include_empty_packets: bool = False
    hidden_size: int = 32
    target_sparsity: float = 0.1
    sparsity_weight: float = 0.2
    learning_rate: float = 0.05
    batch_size: int = 32
    max_epochs: int = 600
    patience: int = 30
    val_fraction: float = 0.2
    train_seed: int = REFERENCE_TRAIN_SEED
    corpus_seed: int = REFERENCE_CORPUS_SEED
    flows_per_device: int = REFERENCE_FLOWS_PER_DEVICE
    malicious_flows: int = REFERENCE_MALICIOUS_FLOWS
    k_folds: int = 5
    n_values: list[int] = field(default_factory=lambda: list(range(2, 11)))
    models_dir: str = "models"

    def __post_init__(self) -> None:
        if self.timeout_seconds <= 0:
            raise ConfigError(f"timeout_seconds must be positive, got {self.timeout_seconds}")
        if self.n_packets < 2:
            raise ConfigError(f"n_packets must be at least 2, got {self.n_packets}")
        if not 0 < self.val_fraction < 1:
            raise ConfigError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if any(n < 2 for n in self.n_values):
            raise ConfigError(f"every entry of n_values must be at least 2, got {self.n_values}")

    def hyperparams(self, n_packets: int | None = None) -> Hyperparams:
        return Hyperparams(
            input_size=N_FEATURES,
            hidden_size=self.hidden_size,
            target_sparsity=self.target_sparsity,
            sparsity_weight=self.sparsity_weight,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            n_packets=self.n_packets if n_packets is None else n_packets,
        )


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


def _coerce(name: str, value):
    if name == "n_values":
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip()]
        try:
            return [int(v) for v in value]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"n_values must be a list of integers, got {value!r}") from exc
    kind = _FIELD_TYPES[name]
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "bool":
            if isinstance(value, bool):
                return value
            if isinstance(value, str):
                return value.lower() in ("1", "true", "yes", "on")
            return bool(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {name}: {value!r}") from exc


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults, overlaid with a flat JSON document, overlaid with CLI values."""
    values: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fp:
                doc = json.load(fp)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a flat JSON object")
        for key, value in doc.items():
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}: unknown config key {key!r}")
            values[key] = _coerce(key, value)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, value)
    return PipelineConfig(**values)
