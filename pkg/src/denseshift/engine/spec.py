"""Plain-data descriptions of networks, serialisable to and from dicts."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

from ..errors import ConfigError
from ..reparam import SUPPORTED_BITS

LAYER_KINDS = ("conv2d", "linear", "batchnorm", "relu", "maxpool", "avgpool", "flatten", "gather")
PROVIDER_KINDS = ("full_precision", "dense_shift", "quantizer", "frozen_shift")
WEIGHTED = ("conv2d", "linear")


@dataclass(frozen=True)
class WeightProviderSpec:
    """How a conv/linear layer obtains the weight that multiplies activations.

    ``frozen_shift`` is inference-only: fixed signed powers of two (zeros
    allowed when ``allow_zero``), as loaded from a model file or produced by
    conversion.
    """

    kind: str = "full_precision"
    bits: int = 3
    exponent_bias: int = 0
    quantizer: str = "symmetric_pot"
    zero_threshold: float | None = None
    rescale: bool = True
    drop_ln2: bool = False
    allow_zero: bool = False

    def __post_init__(self):
        if self.kind not in PROVIDER_KINDS:
            raise ConfigError(f"unknown weight provider {self.kind!r}")
        if self.kind in ("dense_shift", "quantizer") and self.bits not in SUPPORTED_BITS:
            raise ConfigError(f"bits must be one of {SUPPORTED_BITS}, got {self.bits}")

    @property
    def quantized(self) -> bool:
        return self.kind != "full_precision"


FULL_PRECISION = WeightProviderSpec()


def dense_shift(bits=3, exponent_bias=0, **kw) -> WeightProviderSpec:
    return WeightProviderSpec("dense_shift", bits=bits, exponent_bias=exponent_bias, **kw)


def quantizer(kind="symmetric_pot", bits=3, exponent_bias=0, zero_threshold=None) -> WeightProviderSpec:
    return WeightProviderSpec("quantizer", bits=bits, exponent_bias=exponent_bias,
                              quantizer=kind, zero_threshold=zero_threshold)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 1
    stride: int = 1
    padding: int = 0
    bias: bool = True
    eps: float = 1e-5
    bn_momentum: float = 0.1
    index: tuple = ()
    weight: WeightProviderSpec = FULL_PRECISION

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind in WEIGHTED and (self.in_channels <= 0 or self.out_channels <= 0):
            raise ConfigError(f"{self.kind} needs positive in/out channel counts")
        if self.kind in ("conv2d", "maxpool", "avgpool") and (self.kernel_size < 1 or self.stride < 1):
            raise ConfigError("kernel_size and stride must be >= 1")
        if self.kind == "batchnorm" and self.in_channels <= 0:
            raise ConfigError("batchnorm needs in_channels")
        if self.kind == "gather":
            object.__setattr__(self, "index", tuple(int(i) for i in self.index))

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        defaults = LayerSpec.__dataclass_fields__
        for f in fields(self):
            if f.name == "kind":
                continue
            v = getattr(self, f.name)
            if f.name == "weight":
                if self.kind in WEIGHTED:
                    d["weight"] = {k: val for k, val in asdict(v).items()
                                   if val != getattr(FULL_PRECISION, k) or k == "kind"}
                continue
            if v != defaults[f.name].default:
                d[f.name] = list(v) if isinstance(v, tuple) else v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown layer fields {sorted(unknown)}")
        if "weight" in d:
            w = d["weight"]
            d["weight"] = w if isinstance(w, WeightProviderSpec) else WeightProviderSpec(**w)
        if "index" in d:
            d["index"] = tuple(d["index"])
        return cls(**d)


def conv2d(cin, cout, k, stride=1, padding=0, bias=True, weight=FULL_PRECISION) -> LayerSpec:
    return LayerSpec("conv2d", cin, cout, k, stride, padding, bias, weight=weight)


def linear(fin, fout, bias=True, weight=FULL_PRECISION) -> LayerSpec:
    return LayerSpec("linear", fin, fout, bias=bias, weight=weight)


def batchnorm(c, eps=1e-5, momentum=0.1) -> LayerSpec:
    return LayerSpec("batchnorm", c, eps=eps, bn_momentum=momentum)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def maxpool(k=2, stride=None) -> LayerSpec:
    return LayerSpec("maxpool", kernel_size=k, stride=stride or k)


def avgpool(k=2, stride=None) -> LayerSpec:
    return LayerSpec("avgpool", kernel_size=k, stride=stride or k)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def gather(index) -> LayerSpec:
    return LayerSpec("gather", index=tuple(index))


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layers plus the per-sample input shape, e.g. ``(1, 28, 28)``."""

    input_shape: tuple
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape), "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        try:
            return cls(tuple(d["input_shape"]), tuple(LayerSpec.from_dict(l) for l in d["layers"]))
        except KeyError as e:
            raise ConfigError(f"network spec missing {e}") from None

    def quantized_layers(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if l.kind in WEIGHTED and l.weight.quantized]

    def with_layer(self, i, layer) -> "NetworkSpec":
        layers = list(self.layers)
        layers[i] = layer
        return replace(self, layers=tuple(layers))
