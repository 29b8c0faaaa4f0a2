"""JSON run configuration with strict schema checking.

Sections: ``grid``, ``lighting``, ``render``, ``network``, ``train``,
``experiment``, ``seeds``, ``paths``. Every key is optional (defaults are
the desk-scale setup); unknown keys and wrongly typed values are errors.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union, get_args, get_origin, get_type_hints


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridConfig:
    nd: int = 6
    ns: int = 6
    nr: int = 8


@dataclass(frozen=True)
class LightingConfig:
    n_probes: int = 20
    n_test_probes: int = 4
    probe_height: int = 16
    channels: int = 1
    # None: one render per probe for each labeled point.
    labeled_lightings: Optional[int] = None
    unlabeled_lightings: int = 1
    test_lightings: int = 2
    # Render provisional pairs under the source image's lighting instead of a fresh draw.
    same_lighting: bool = False


@dataclass(frozen=True)
class RenderConfig:
    resolution: int = 32
    gamma: bool = False


@dataclass(frozen=True)
class NetworkConfig:
    encoder_widths: tuple[int, ...] = (16, 32, 64)
    fc_hidden: int = 1024
    mlp_hidden: tuple[int, ...] = (32, 32)


@dataclass(frozen=True)
class TrainSection:
    init_epochs: int = 10
    total_epochs: int = 40
    batch_size: int = 32
    unlabeled_batch_size: Optional[int] = None
    steps_per_epoch: Optional[int] = 20
    learning_rate: float = 1e-3
    # Learning rate drops by lr_decay_factor from this epoch on (null: constant rate).
    lr_decay_epoch: Optional[int] = 30
    lr_decay_factor: float = 0.1
    divergence_factor: float = 10.0
    eval_every: int = 5


@dataclass(frozen=True)
class ExperimentSection:
    scheme: str = "uniform"
    uniform: tuple[int, int, int] = (2, 2, 2)
    random_fraction: float = 0.125
    labeled_fractions: tuple[float, ...] = (0.05, 0.1, 0.2)
    unlabeled_fractions: tuple[float, ...] = (0.0, 0.4, 0.75)
    center_fraction: float = 0.5
    toy_target: str = "smooth"
    toy_labeled: int = 10
    toy_unlabeled: int = 100
    toy_test: int = 200

    def __post_init__(self):
        if self.scheme not in ("baseline", "uniform", "random"):
            raise ConfigError(f"experiment.scheme must be baseline, uniform or random, got {self.scheme!r}")
        if self.toy_target not in ("smooth", "discontinuous"):
            raise ConfigError(f"experiment.toy_target must be smooth or discontinuous, got {self.toy_target!r}")


@dataclass(frozen=True)
class SeedsConfig:
    master: int = 0
    probes: int = 0
    test_probes: int = 1000
    subsample: int = 1234
    data: int = 1


@dataclass(frozen=True)
class PathsConfig:
    out: str = "runs"
    data: Optional[str] = None


SECTIONS = {
    "grid": GridConfig,
    "lighting": LightingConfig,
    "render": RenderConfig,
    "network": NetworkConfig,
    "train": TrainSection,
    "experiment": ExperimentSection,
    "seeds": SeedsConfig,
    "paths": PathsConfig,
}


def _coerce(value, hint, where: str):
    origin = get_origin(hint)
    if origin is Union:
        args = [a for a in get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
        args = get_args(hint)
        item = args[0]
        if len(args) != 2 or args[1] is not Ellipsis:
            if len(value) != len(args):
                raise ConfigError(f"{where}: expected {len(args)} items, got {len(value)}")
        return tuple(_coerce(v, item, f"{where}[{i}]") for i, v in enumerate(value))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _section(cls, data: Any, name: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{name}: expected an object")
    hints = get_type_hints(cls)
    unknown = set(data) - set(hints)
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    kwargs = {k: _coerce(v, hints[k], f"{name}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


@dataclass(frozen=True)
class Config:
    grid: GridConfig = field(default_factory=GridConfig)
    lighting: LightingConfig = field(default_factory=LightingConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainSection = field(default_factory=TrainSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    seeds: SeedsConfig = field(default_factory=SeedsConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self):
        t = self.train
        if not 0 <= t.init_epochs <= t.total_epochs:
            raise ConfigError("train: need 0 <= init_epochs <= total_epochs")
        if t.lr_decay_epoch is not None and not 0 <= t.lr_decay_epoch <= t.total_epochs:
            raise ConfigError("train: need 0 <= lr_decay_epoch <= total_epochs")
        if not 0 < t.lr_decay_factor <= 1:
            raise ConfigError("train: lr_decay_factor must be in (0, 1]")
        if min(self.grid.nd, self.grid.ns, self.grid.nr) < 2:
            raise ConfigError("grid: each axis needs at least 2 samples")
        if self.lighting.channels not in (1, 3):
            raise ConfigError("lighting.channels must be 1 or 3")

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        return cls(**{name: _section(SECTIONS[name], data[name], name) for name in data})

    def to_dict(self) -> dict:
        def plain(v):
            return list(v) if isinstance(v, tuple) else v

        return {name: {k: plain(v) for k, v in dataclasses.asdict(getattr(self, name)).items()} for name in SECTIONS}

    def replace(self, **sections) -> "Config":
        """Copy with per-section overrides, e.g. ``cfg.replace(train={"total_epochs": 4})``."""
        data = self.to_dict()
        for name, values in sections.items():
            if name not in SECTIONS:
                raise ConfigError(f"unknown config section {name!r}")
            data[name] = {**data[name], **values}
        return Config.from_dict(data)


def load_config(path: Union[str, Path, None]) -> Config:
    if path is None:
        return Config()
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return Config.from_dict(data)
