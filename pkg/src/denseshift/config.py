"""Run configuration: one JSON document describing a training run."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .engine.models import ARCHITECTURES, mlp, with_auto_bias
from .engine.spec import FULL_PRECISION, NetworkSpec, WeightProviderSpec
from .engine.spec import dense_shift as _dense_shift
from .engine.spec import quantizer as _quantizer
from .engine.train import TrainConfig
from .errors import ConfigError

WEIGHT_KINDS = ("full_precision", "dense_shift", "symmetric_pot", "sign_shift")
DATASETS = ("mnist", "cifar10", "blobs")
INITS = ("kaiming", "low_variance")


@dataclass
class ModelConfig:
    arch: str = "lenet"
    weight: str = "dense_shift"
    bits: int = 3
    exponent_bias: int | None = None  # None: pick per layer from fan-in
    rescale: bool = True
    drop_ln2: bool = False
    quantize_first: bool = False
    quantize_head: bool = True
    network: dict | None = None  # explicit spec; overrides arch/weight

    def __post_init__(self):
        if self.network is None and self.arch not in ARCHITECTURES and self.arch != "mlp":
            raise ConfigError(f"unknown arch {self.arch!r}; choose from {sorted(ARCHITECTURES) + ['mlp']}")
        if self.weight not in WEIGHT_KINDS:
            raise ConfigError(f"unknown weight kind {self.weight!r}; choose from {WEIGHT_KINDS}")

    def provider(self) -> WeightProviderSpec:
        b = self.exponent_bias or 0
        if self.weight == "full_precision":
            return FULL_PRECISION
        if self.weight == "dense_shift":
            return _dense_shift(self.bits, b, rescale=self.rescale, drop_ln2=self.drop_ln2)
        return _quantizer(self.weight, self.bits, b)


@dataclass
class DataConfig:
    dataset: str = "mnist"
    root: str | None = None  # default: $DENSESHIFT_DATA or ~/data, plus the dataset dir
    train_limit: int | None = None
    test_limit: int | None = None

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}; choose from {DATASETS}")
        for k in ("train_limit", "test_limit"):
            v = getattr(self, k)
            if v is not None and v < 0:
                raise ConfigError(f"{k} must be >= 0")


@dataclass
class InitConfig:
    strategy: str = "low_variance"
    sigma: float = 1e-3

    def __post_init__(self):
        if self.strategy not in INITS:
            raise ConfigError(f"unknown init {self.strategy!r}; choose from {INITS}")
        if not self.sigma > 0:
            raise ConfigError("sigma must be > 0")


@dataclass
class MetricsConfig:
    cosine_every: int = 1  # epochs; 0 disables
    cosine_source: str = "weight"
    trace_elements: int = 16  # 0 disables latent traces
    trace_every: int = 10  # optimiser steps

    def __post_init__(self):
        if self.cosine_source not in ("weight", "latent"):
            raise ConfigError("cosine_source must be 'weight' or 'latent'")
        if self.cosine_every < 0 or self.trace_elements < 0 or self.trace_every < 1:
            raise ConfigError("metric cadences must be non-negative (trace_every >= 1)")


_SECTIONS = {"train": TrainConfig, "model": ModelConfig, "data": DataConfig,
             "init": InitConfig, "metrics": MetricsConfig}


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    init: InitConfig = field(default_factory=InitConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    output_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - set(_SECTIONS) - {"output_dir"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        kw = {}
        for name, typ in _SECTIONS.items():
            sec = d.get(name, {})
            if not isinstance(sec, dict):
                raise ConfigError(f"section {name!r} must be an object")
            allowed = {f.name for f in fields(typ)}
            bad = set(sec) - allowed
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            try:
                kw[name] = typ(**sec)
            except TypeError as e:
                raise ConfigError(f"section {name!r}: {e}") from None
        if "output_dir" in d:
            kw["output_dir"] = str(d["output_dir"])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from None

    def network_spec(self, input_shape, num_classes) -> NetworkSpec:
        """Network for per-sample inputs of ``input_shape``."""
        m = self.model
        if m.network is not None:
            return NetworkSpec.from_dict(m.network)
        if m.arch == "mlp":
            if len(input_shape) != 1:
                raise ConfigError("mlp needs flat (features,) inputs")
            spec = mlp((input_shape[0], 32, num_classes), m.provider(), quantize_first=m.quantize_first)
        else:
            if len(input_shape) != 3 or input_shape[1] != input_shape[2]:
                raise ConfigError(f"{m.arch} needs square (C, H, W) inputs, got {input_shape}")
            spec = ARCHITECTURES[m.arch](m.provider(), in_channels=input_shape[0], size=input_shape[1],
                                         classes=num_classes, quantize_first=m.quantize_first,
                                         quantize_head=m.quantize_head)
        if m.exponent_bias is None:
            spec = with_auto_bias(spec)
        return spec
