"""Run configuration files (TOML) with strict key checking."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import tomli

from .data import ORACLES
from .solver import SolverConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    oracle: str = "common_source_surrogate"
    n: int = 50
    seed: int = 0
    horizon: float = 1.0
    valid_fraction: float = 0.2
    amplitude: float = 1.0

    def __post_init__(self):
        if self.oracle not in ORACLES:
            raise ConfigError(f"unknown oracle {self.oracle!r}")
        if self.n < 1 or not self.horizon > 0 or not 0 <= self.valid_fraction < 1:
            raise ConfigError("dataset needs n >= 1, horizon > 0 and 0 <= valid_fraction < 1")


@dataclass(frozen=True)
class CosimConfig:
    runs: int = 100
    seed: int = 1
    horizon: float = 1.0


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(rtol=1e-7, atol=1e-9, h_init=1e-4))
    cosim: CosimConfig = field(default_factory=CosimConfig)
    oracle: dict = field(default_factory=dict)  # oracle constant overrides

    def to_dict(self) -> dict:
        def clean(d):
            return {k: (None if isinstance(v, float) and math.isinf(v) else list(v) if isinstance(v, tuple) else v)
                    for k, v in d.items()}

        return {
            "dataset": clean(dataclasses.asdict(self.dataset)),
            "train": clean(self.train.to_dict()),
            "solver": clean(dataclasses.asdict(self.solver)),
            "cosim": clean(dataclasses.asdict(self.cosim)),
            "oracle": dict(self.oracle),
        }


_SECTIONS = {"dataset": DatasetConfig, "train": TrainConfig, "solver": SolverConfig, "cosim": CosimConfig}


def _build(cls, values: dict, section: str):
    known = {f.name for f in fields(cls) if f.init}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    values = {k: (tuple(v) if isinstance(v, list) else v) for k, v in values.items()}
    if section == "solver" and values.get("h_max") is None:
        values.pop("h_max", None)
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def from_dict(d: dict) -> RunConfig:
    unknown = set(d) - set(_SECTIONS) - {"oracle"}
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    base = RunConfig()
    kw = {}
    for name, cls in _SECTIONS.items():
        if name in d:
            merged = {**{k: v for k, v in base.to_dict()[name].items() if v is not None}, **d[name]}
            kw[name] = _build(cls, merged, name)
    if "oracle" in d:
        kind = kw.get("dataset", base.dataset).oracle
        ocls = ORACLES[kind]
        _build(ocls, d["oracle"], "oracle")  # validates keys and values
        kw["oracle"] = dict(d["oracle"])
    return dataclasses.replace(base, **kw)


def load(path) -> RunConfig:
    with open(Path(path), "rb") as fh:
        try:
            doc = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(doc)


def with_overrides(cfg: RunConfig, section: str, **values) -> RunConfig:
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    current = getattr(cfg, section)
    return dataclasses.replace(cfg, **{section: dataclasses.replace(current, **values)})


__all__ = ["RunConfig", "DatasetConfig", "CosimConfig", "ConfigError", "from_dict", "load", "with_overrides"]
