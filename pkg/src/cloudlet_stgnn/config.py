"""Experiment configuration: YAML file -> typed, fully resolved settings.

Unknown keys are rejected with their dotted path. Every seed must be given
explicitly. The resolved configuration (defaults filled in) hashes to a
stable run-directory name.
"""
import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .model import ModelConfig
from .protocols import SETUPS, RunConfig


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class SynthSection:
    n: int = 40
    T: int = 6000
    seed: Optional[int] = None
    box_km: float = 30.0
    base: float = 60.0
    daily_amplitude: float = 8.0
    spatial_amplitude: float = 4.0
    noise: float = 1.5
    noise_ar: float = 0.9


@dataclass(frozen=True)
class PathsSection:
    speeds: str = ""
    sensors: str = ""
    distances: Optional[str] = None


@dataclass(frozen=True)
class DatasetSection:
    synth: Optional[SynthSection] = None
    paths: Optional[PathsSection] = None
    interval_minutes: int = 5


@dataclass(frozen=True)
class GraphSection:
    sigma2: Optional[float] = None
    epsilon: float = 0.1


@dataclass(frozen=True)
class PartitionSection:
    cloudlets: Optional[list] = None  # [[a, b], ...] in the sensors' coordinate system
    n_cloudlets: int = 7  # used only for the advisory placement when cloudlets is null
    placement_seed: int = 0
    comm_range_km: float = 8.0
    hops_override: Optional[int] = None


@dataclass(frozen=True)
class ModelSection:
    st_blocks: int = 2
    cheb_K: int = 3
    temporal_kernel: int = 3
    channels: list = field(default_factory=lambda: [64, 16, 64])
    head_channels: int = 16
    input_window: int = 12
    dropout_rate: float = 0.5


@dataclass(frozen=True)
class ScheduleSection:
    step_size: int = 5
    gamma: float = 0.7


@dataclass(frozen=True)
class SeedsSection:
    init: int
    shuffle: int
    gossip: int
    dropout: int


@dataclass(frozen=True)
class TrainingSection:
    seeds: SeedsSection
    setup: str = "centralized"
    epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-4
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    weight_decay: float = 1e-5
    local_epochs: int = 1
    mask_zeros: bool = False
    wmape_denominator: str = "predicted"
    threads: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSection
    training: TrainingSection
    graph: GraphSection = field(default_factory=GraphSection)
    partition: PartitionSection = field(default_factory=PartitionSection)
    model: ModelSection = field(default_factory=ModelSection)
    horizons: list = field(default_factory=lambda: [3, 6, 12])
    output_dir: str = "runs"

    def model_config(self) -> ModelConfig:
        m = self.model
        return ModelConfig(st_blocks=m.st_blocks, cheb_K=m.cheb_K, temporal_kernel=m.temporal_kernel,
                           channels=tuple(m.channels), head_channels=m.head_channels,
                           input_window=m.input_window, dropout_rate=m.dropout_rate,
                           hops_override=self.partition.hops_override)

    def run_config(self, horizon: int) -> RunConfig:
        t = self.training
        return RunConfig(setup=t.setup, epochs=t.epochs, batch_size=t.batch_size, horizon=horizon, lr=t.lr,
                         step_size=t.schedule.step_size, gamma=t.schedule.gamma, weight_decay=t.weight_decay,
                         local_epochs=t.local_epochs, init_seed=t.seeds.init, shuffle_seed=t.seeds.shuffle,
                         gossip_seed=t.seeds.gossip, dropout_seed=t.seeds.dropout, mask_zeros=t.mask_zeros,
                         wmape_denominator=t.wmape_denominator, threads=t.threads, model=self.model_config())


# -- generic dataclass builder ------------------------------------------------

def _check_scalar(tp, value, path):
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
    if tp is list:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return value
    raise TypeError(tp)


def _convert(tp, value, path):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _convert(args[0], value, path)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    return _check_scalar(tp, value, path)


def _build(cls, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in fields:
            raise ConfigError(f"{path}.{key}" if path else str(key), "unknown key")
    kwargs = {}
    for name, f in fields.items():
        sub = f"{path}.{name}" if path else name
        if name in data:
            kwargs[name] = _convert(hints[name], data[name], sub)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError(sub, "required key is missing")
    return cls(**kwargs)


def _validate(cfg: ExperimentConfig) -> None:
    ds = cfg.dataset
    if (ds.synth is None) == (ds.paths is None):
        raise ConfigError("dataset", "give exactly one of 'synth' or 'paths'")
    if ds.synth is not None and ds.synth.seed is None:
        raise ConfigError("dataset.synth.seed", "required key is missing")
    if ds.paths is not None and (not ds.paths.speeds or not ds.paths.sensors):
        raise ConfigError("dataset.paths", "'speeds' and 'sensors' are required")
    if cfg.training.setup not in SETUPS:
        raise ConfigError("training.setup", f"must be one of {', '.join(SETUPS)}")
    if cfg.training.wmape_denominator not in ("predicted", "truth"):
        raise ConfigError("training.wmape_denominator", "must be 'predicted' or 'truth'")
    if not cfg.horizons or any(isinstance(h, bool) or not isinstance(h, int) or h < 1 for h in cfg.horizons):
        raise ConfigError("horizons", "must be a non-empty list of positive integers")
    if len(cfg.model.channels) != 3:
        raise ConfigError("model.channels", "must list three widths")
    cl = cfg.partition.cloudlets
    if cl is not None:
        if not cl or any(not isinstance(p, list) or len(p) != 2 for p in cl):
            raise ConfigError("partition.cloudlets", "must be a list of [a, b] coordinate pairs")
    try:
        cfg.model_config()
        cfg.run_config(cfg.horizons[0])
    except ValueError as exc:
        raise ConfigError("model" if "channel" in str(exc) or "window" in str(exc) else "training",
                          str(exc)) from None


def from_dict(data: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data, "")
    _validate(cfg)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"invalid YAML: {exc}") from None
    return from_dict(data or {})


def resolved_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(resolved_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def dump_resolved(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(resolved_dict(cfg), sort_keys=True))
