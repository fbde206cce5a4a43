"""Run configuration: one JSON document with a section per component.

Precedence (lowest to highest): built-in defaults, the ``--config`` file,
command-line flags. Unknown keys anywhere are an error.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .data.synth import SynthConfig
from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MetricConfig:
    resolution: int = 256
    n_generate: int = 64
    sca_seeds: int = 5

    def __post_init__(self):
        if self.resolution < 8 or self.n_generate < 0 or self.sca_seeds < 1:
            raise ConfigError("metrics: resolution >= 8, n_generate >= 0, sca_seeds >= 1 required")


@dataclass(frozen=True)
class Paths:
    dataset: str = "data"
    assets: str = "data/assets"
    checkpoints: str = "run/checkpoints"
    outputs: str = "run"


SECTIONS = {"model": ModelConfig, "synth": SynthConfig, "train": TrainConfig,
            "metrics": MetricConfig, "paths": Paths}


def _build(cls, d: dict, section: str):
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys in section {section!r}: {sorted(unknown)}")
    # JSON has no tuples
    d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    try:
        return cls(**d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"section {section!r}: {e}") from None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    paths: Paths = field(default_factory=Paths)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(SECTIONS) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
        kw = {name: _build(SECTIONS[name], d[name], name) for name in SECTIONS if name in d}
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
        return cls(seed=seed, **kw).with_seed(seed)

    def with_seed(self, seed: int) -> "RunConfig":
        """The run seed drives the generator, the training streams and the metrics."""
        return replace(self, seed=seed, synth=replace(self.synth, seed=seed), train=replace(self.train, seed=seed))

    def with_overrides(self, seed=None, mode=None, steps=None, out=None) -> "RunConfig":
        cfg = self
        if seed is not None:
            if seed < 0:
                raise ConfigError("--seed must be nonnegative")
            cfg = cfg.with_seed(seed)
        if mode is not None:
            cfg = replace(cfg, model=_build(ModelConfig, {**cfg.model.to_dict(), "mode": mode}, "model"))
        if steps is not None:
            cfg = replace(cfg, train=_build(TrainConfig, {**cfg.train.to_dict(), "steps": steps}, "train"))
        if out is not None:
            cfg = replace(cfg, paths=replace(cfg.paths, outputs=str(out)))
        return cfg

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(), encoding="utf-8")
        return path


def load_config(path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    if not isinstance(d, dict):
        raise ConfigError("config root must be an object")
    return RunConfig.from_dict(d)
