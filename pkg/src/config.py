"""
Configuration Models

Pydantic models for every configurable part of the pipeline, and the YAML
run-configuration file that bundles them. The file is versioned; each model
is one mapping section:

    version: 1
    seed: 7
    sim:    {duration: 2880, base_inflow: 1.0, ...}
    model:  {lookback: 12, horizon: 12, hidden_channels: 32, ...}
    train:  {learning_rate: 0.001, batch_size: 32, ...}
    split:  {train: 0.7, val: 0.1, test: 0.2}
    window: {lookback: 12, horizon: 12}
    eval:   {mape_epsilon: 0.001, anomaly_k: 3.0, anomaly_m: 3, ...}
    paths:  {graph_dir: ..., panel: ..., checkpoint: ...}
"""

import zlib
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import ConfigError, InvalidConfig

CONFIG_VERSION = 1

# 2023-10-01 00:00:00 UTC
DEFAULT_START_TIMESTAMP = 1696118400


def derive_seed(seed: int, tag: str) -> int:
    """Derive a purpose-specific seed: ``seed XOR crc32(tag)``."""
    return (int(seed) ^ zlib.crc32(tag.encode("utf-8"))) & 0xFFFFFFFF


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class AnomalySpec(_Section):
    """An injected fault: leak, infiltration or blockage on a node or pipe.

    ``target`` is a node id, or ``"<from>-><to>"`` for a pipe.
    """

    kind: Literal["leak", "infiltration", "blockage"]
    target: str = Field(min_length=1)
    start: int = Field(ge=0)
    end: int = Field(gt=0)
    magnitude: float = Field(gt=0.0, le=1.0)

    @model_validator(mode="after")
    def _check_window(self) -> "AnomalySpec":
        if self.start >= self.end:
            raise ValueError(f"anomaly start {self.start} must precede end {self.end}")
        return self

    @property
    def is_edge_target(self) -> bool:
        return "->" in self.target

    @classmethod
    def parse(cls, text: str) -> "AnomalySpec":
        """Parse the CLI form ``kind:target:start:end:magnitude``."""
        parts = text.split(":")
        if len(parts) != 5:
            raise ConfigError(f"anomaly must be kind:target:start:end:magnitude, got {text!r}")
        kind, target, start, end, magnitude = parts
        try:
            return cls(kind=kind, target=target, start=int(start), end=int(end),
                       magnitude=float(magnitude))
        except ValueError as exc:
            raise ConfigError(f"invalid anomaly {text!r}: {exc}") from exc


class SimConfig(_Section):
    """Synthetic panel generator settings (US customary units)."""

    nodes: int = Field(default=8, ge=2)  # demo network size when no graph directory is given
    duration: int = Field(default=2880, ge=1)
    stride: int = Field(default=600, gt=0)
    base_inflow: float = Field(default=1.0, gt=0.0)
    source_inflows: Dict[str, float] = Field(default_factory=dict)
    lateral_inflow: float = Field(default=0.0, ge=0.0)
    diurnal_amplitude: float = Field(default=0.3, ge=0.0, lt=1.0)
    weekly_amplitude: float = Field(default=0.1, ge=0.0, lt=1.0)
    noise_std: float = Field(default=0.02, ge=0.0)
    seed: Optional[int] = None
    start_timestamp: int = DEFAULT_START_TIMESTAMP
    allow_surcharge: bool = False

    @field_validator("source_inflows")
    @classmethod
    def _positive_sources(cls, value: Dict[str, float]) -> Dict[str, float]:
        for node, inflow in value.items():
            if inflow <= 0:
                raise ValueError(f"source inflow for {node!r} must be > 0, got {inflow}")
        return value

    @property
    def steps_per_day(self) -> int:
        return 86400 // self.stride

    @property
    def steps_per_week(self) -> int:
        return 7 * 86400 // self.stride


class HydroNetConfig(_Section):
    """Architecture hyperparameters. ``blocks`` is fixed at two ST-MPNN blocks."""

    lookback: int = Field(default=12, ge=1)
    horizon: int = Field(default=12, ge=1)
    hidden_channels: int = Field(default=32, ge=1)
    edge_embed_dim: int = Field(default=16, ge=1)
    temporal_kernel: int = Field(default=3, ge=1)
    blocks: Literal[2] = 2
    in_channels: Literal[2] = 2
    edge_features: Literal[9] = 9
    bidirectional: bool = False
    seed: Optional[int] = None

    @property
    def head_kernel(self) -> int:
        """Steps left for the output head after both blocks."""
        return self.lookback - 2 * self.blocks * (self.temporal_kernel - 1)

    def check_receptive_field(self) -> None:
        if self.head_kernel < 1:
            required = 2 * self.blocks * (self.temporal_kernel - 1) + 1
            raise InvalidConfig(
                f"lookback {self.lookback} too short: {self.blocks} blocks with kernel "
                f"{self.temporal_kernel} need at least {required} steps"
            )


class TrainConfig(_Section):
    learning_rate: float = Field(default=1e-3, gt=0.0)
    beta1: float = Field(default=0.9, gt=0.0, lt=1.0)
    beta2: float = Field(default=0.999, gt=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    batch_size: int = Field(default=32, ge=1)
    max_epochs: int = Field(default=200, ge=1)
    patience: int = Field(default=15, ge=1)
    min_delta: float = Field(default=1e-6, ge=0.0)
    loss: Literal["mae", "mse"] = "mae"
    norm: Literal["global", "per_node"] = "global"
    seed: Optional[int] = None
    progress: bool = True

    @model_validator(mode="after")
    def _check_patience(self) -> "TrainConfig":
        if self.patience > self.max_epochs:
            raise ValueError(f"patience {self.patience} exceeds max_epochs {self.max_epochs}")
        return self


class SplitSpec(_Section):
    train: float = Field(default=0.7, gt=0.0)
    val: float = Field(default=0.1, gt=0.0)
    test: float = Field(default=0.2, gt=0.0)

    @model_validator(mode="after")
    def _check_sum(self) -> "SplitSpec":
        total = self.train + self.val + self.test
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {total}")
        return self


class WindowSpec(_Section):
    lookback: int = Field(default=12, ge=1)
    horizon: int = Field(default=12, ge=1)

    @property
    def span(self) -> int:
        return self.lookback + self.horizon


class EvalConfig(_Section):
    mape_epsilon: float = Field(default=1e-3, ge=0.0)
    anomaly_k: float = Field(default=3.0, gt=0.0)
    anomaly_m: int = Field(default=3, ge=1)
    seasonal_period: int = Field(default=144, ge=1)
    forecast_step: int = Field(default=1, ge=1)


class PathsConfig(_Section):
    graph_dir: Optional[Path] = None
    panel: Optional[Path] = None
    provenance: Optional[Path] = None
    checkpoint: Optional[Path] = None
    labels: Optional[Path] = None
    reference: Optional[Path] = None
    out_dir: Path = Path("./outputs")


class RunConfig(_Section):
    version: int = CONFIG_VERSION
    seed: int = 0
    sim: SimConfig = Field(default_factory=SimConfig)
    model: HydroNetConfig = Field(default_factory=HydroNetConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    split: SplitSpec = Field(default_factory=SplitSpec)
    window: WindowSpec = Field(default_factory=WindowSpec)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    anomalies: List[AnomalySpec] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_consistency(self) -> "RunConfig":
        if self.version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {self.version}")
        if (self.window.lookback, self.window.horizon) != (self.model.lookback, self.model.horizon):
            raise ValueError(
                f"window L/H ({self.window.lookback}/{self.window.horizon}) must match "
                f"model L/H ({self.model.lookback}/{self.model.horizon})"
            )
        return self

    # Sub-seeds stay unset in the file so that a dumped config re-derives the
    # same values from the global seed.
    def effective_sim(self) -> SimConfig:
        seed = self.sim.seed if self.sim.seed is not None else derive_seed(self.seed, "sim")
        return self.sim.model_copy(update={"seed": seed})

    def effective_model(self) -> HydroNetConfig:
        seed = self.model.seed if self.model.seed is not None else derive_seed(self.seed, "init")
        return self.model.model_copy(update={"seed": seed})

    def effective_train(self) -> TrainConfig:
        seed = self.train.seed if self.train.seed is not None else derive_seed(self.seed, "shuffle")
        return self.train.model_copy(update={"seed": seed})


def load_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Load a YAML run configuration; ``None`` yields the defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        raw = yaml.safe_load(f) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    if "version" not in raw:
        raise ConfigError(f"config file {path} has no version (expected version: {CONFIG_VERSION})")
    version = raw["version"]
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version} in {path}")
    return RunConfig.model_validate(raw)


def dump_config(config: RunConfig) -> str:
    """Serialize a configuration with every defaulted field spelled out."""
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)


def save_config(config: RunConfig, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dump_config(config))
