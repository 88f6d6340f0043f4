"""Run configuration: a nested YAML document with CLI overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .ingest import MISSING_POLICIES
from .portfolio import AllocationScheme


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    prices: str | None = None
    missing_policy: str = "drop_asset"
    train_end: str | None = None


@dataclass
class SpectralConfig:
    period: int = 252
    harmonics: int = 4
    include_dc: bool = True
    psd_repair: bool = True
    cross_frequency: bool = True
    refit_every: int | None = None
    moments: str | None = None


@dataclass
class StrategyConfig:
    cuts: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5, 10, 15])
    schemes: list[str] = field(default_factory=lambda: ["depth_halving", "uniform_clusters"])
    rebalance: int | None = 1
    baselines: list[str] = field(default_factory=lambda: ["EW", "MVO"])
    mvo_target: float | None = None
    mvo_ridge: float | None = None
    annualization: float = 252


@dataclass
class SynthConfig:
    kind: str = "cyclic"
    n_assets: int = 6
    n_samples: int = 2520
    period: int = 252
    vol: float = 0.01
    drift: float = 0.0
    rho: float = 0.8
    blocks_a: list[list[int]] | None = None
    blocks_b: list[list[int]] | None = None
    start_date: str = "2010-01-04"
    train_fraction: float = 0.6


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    strategies: StrategyConfig = field(default_factory=StrategyConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    out: str = "out"
    seed: int = 0

    def validate(self) -> "RunConfig":
        d, s, st, sy = self.data, self.spectral, self.strategies, self.synth
        if d.missing_policy not in MISSING_POLICIES:
            raise ConfigError(f"data.missing_policy must be one of {MISSING_POLICIES}")
        if s.period < 2:
            raise ConfigError("spectral.period must be >= 2")
        if not 0 <= s.harmonics <= s.period // 2:
            raise ConfigError(f"spectral.harmonics must lie in [0, {s.period // 2}]")
        if s.harmonics == 0 and not s.include_dc:
            raise ConfigError("a grid without harmonics needs include_dc")
        if s.refit_every is not None and s.refit_every < 1:
            raise ConfigError("spectral.refit_every must be >= 1")
        if not st.cuts or any(int(k) < 1 for k in st.cuts):
            raise ConfigError("strategies.cuts must be a non-empty list of integers >= 1")
        for sc in st.schemes:
            AllocationScheme.parse(sc)
        if st.rebalance is not None and st.rebalance < 1:
            raise ConfigError("strategies.rebalance must be >= 1 (or null for never)")
        for b in st.baselines:
            if b not in ("EW", "MVO"):
                raise ConfigError(f"unknown baseline {b!r}")
        if sy.kind not in ("cyclic", "regime"):
            raise ConfigError("synth.kind must be 'cyclic' or 'regime'")
        if sy.n_assets < 1 or sy.n_samples < 2:
            raise ConfigError("synth needs n_assets >= 1 and n_samples >= 2")
        if not 0 < sy.train_fraction < 1:
            raise ConfigError("synth.train_fraction must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True), encoding="utf-8")

    @classmethod
    def from_dict(cls, doc: dict | None) -> "RunConfig":
        doc = dict(doc or {})
        sections = {"data": DataConfig, "spectral": SpectralConfig,
                    "strategies": StrategyConfig, "synth": SynthConfig}
        kwargs = {}
        for key, value in doc.items():
            if key in sections:
                kwargs[key] = _build(sections[key], value or {}, key)
            elif key in ("out", "seed"):
                kwargs[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with Path(path).open(encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
        if doc is not None and not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(doc)


def _build(kind, values: dict, section: str):
    names = {f.name for f in dataclasses.fields(kind)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {sorted(unknown)}")
    values = {k: (str(v) if k in ("train_end", "start_date") and v is not None else v)
              for k, v in values.items()}
    return kind(**values)
