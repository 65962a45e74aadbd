"""Experiment configuration: one JSON file describes a full run.

Every field has a default, unknown keys are rejected instead of being
silently ignored, and the effective (fully defaulted) config is what
gets echoed into the run directory, so a run is reproducible from its
own artifacts alone.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .nn.resnet import ModelConfig
from .pianoroll import VARIANT_CHANNELS
from .training import TrainConfig


@dataclass(frozen=True)
class SplitConfig:
    seed: int = 0
    ratio: float = 0.7
    target_train: int | None = None
    title_threshold: int = 16

    def __post_init__(self):
        if not 0.0 < self.ratio < 1.0:
            raise ConfigError(f"split ratio must be in (0, 1), got {self.ratio}")
        if self.title_threshold < 0:
            raise ConfigError("title_threshold must be non-negative")


@dataclass(frozen=True)
class ExperimentConfig:
    csv_path: str = ""
    midi_root: str = "."
    cache_dir: str = "cache"
    composer_config: str | None = None
    manifest_path: str | None = None
    run_dir: str = "runs/default"
    variant: str = "full"
    n_eval_segments: int = 90
    workers: int = 1
    split: SplitConfig = field(default_factory=SplitConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.variant not in VARIANT_CHANNELS:
            raise ConfigError(f"unknown variant {self.variant!r}; "
                              f"expected one of {sorted(VARIANT_CHANNELS)}")
        expected = VARIANT_CHANNELS[self.variant]
        if self.model.in_channels != expected:
            raise ConfigError(
                f"variant {self.variant!r} produces {expected} input channels "
                f"but model.in_channels is {self.model.in_channels}")
        if self.n_eval_segments < 1:
            raise ConfigError("n_eval_segments must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()


_SECTIONS = {"split": SplitConfig, "model": ModelConfig, "train": TrainConfig}


def _build_section(cls, payload: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**payload)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def experiment_config_from_dict(payload: dict, where: str = "config") -> ExperimentConfig:
    if not isinstance(payload, dict):
        raise ConfigError(f"{where}: expected a JSON object")
    payload = dict(payload)
    raw_sections: dict[str, dict] = {}
    for name in _SECTIONS:
        raw = payload.pop(name, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"{where}.{name}: expected a JSON object")
        raw_sections[name] = dict(raw)

    # in_channels follows the variant unless spelled out
    variant = payload.get("variant", "full")
    if variant in VARIANT_CHANNELS and "in_channels" not in raw_sections["model"]:
        raw_sections["model"]["in_channels"] = VARIANT_CHANNELS[variant]

    sections = {name: _build_section(cls, raw_sections[name], f"{where}.{name}")
                for name, cls in _SECTIONS.items()}
    top_known = {f.name for f in dataclasses.fields(ExperimentConfig)} - set(_SECTIONS)
    unknown = sorted(set(payload) - top_known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    return _build_section(ExperimentConfig, {**payload, **sections}, where)


def load_experiment_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return experiment_config_from_dict(payload, where=str(path))


def write_effective_config(path, config: ExperimentConfig) -> None:
    payload = config.to_dict()
    payload["config_hash"] = config.config_hash()
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
