"""Weight providers: how a conv/linear layer turns parameters into a weight.

A provider owns the trainable tensors behind a layer's weight, produces the
tensor that multiplies activations, and maps the gradient w.r.t. that tensor
back onto its own parameters.
"""
from __future__ import annotations

from ..quantizers import QuantizerConfig, quantize, ste_backward_quantizer
from ..reparam import (
    LatentWeights,
    ShiftCodes,
    backward_latents,
    init_kaiming,
    init_low_variance,
    kaiming_std,
    materialize_shift,
)
from .spec import WeightProviderSpec


class FullPrecision:
    kind = "full_precision"
    latent_names = ("weight",)

    def __init__(self, spec: WeightProviderSpec):
        self.spec = spec

    def init(self, shape, fan_in, rng, dtype, init="kaiming", sigma=1e-3):
        return {"weight": rng.normal(0.0, kaiming_std(fan_in), size=shape).astype(dtype)}

    def weight(self, params):
        return params["weight"]

    def backward(self, grad_w, params):
        return {"weight": grad_w}

    def codes(self, params):
        return None


class DenseShift:
    kind = "dense_shift"
    latent_names = ("w_sign", "w_scale")

    def __init__(self, spec: WeightProviderSpec):
        self.spec = spec

    def latents(self, params) -> LatentWeights:
        return LatentWeights(params["w_sign"], params["w_scale"], self.spec.bits,
                             self.spec.exponent_bias)

    def init(self, shape, fan_in, rng, dtype, init="low_variance", sigma=1e-3):
        if init == "kaiming":
            lat = init_kaiming(shape, fan_in, self.spec.bits, rng, self.spec.exponent_bias, dtype)
        elif init == "low_variance":
            lat = init_low_variance(shape, self.spec.bits, sigma, rng, self.spec.exponent_bias, dtype)
        else:
            raise ValueError(f"unknown init {init!r}")
        return {"w_sign": lat.w_sign, "w_scale": lat.w_scale}

    def weight(self, params):
        return materialize_shift(self.latents(params))[0]

    def backward(self, grad_w, params):
        gs, gt = backward_latents(grad_w, self.latents(params), rescale=self.spec.rescale,
                                  drop_ln2=self.spec.drop_ln2)
        return {"w_sign": gs, "w_scale": gt}

    def codes(self, params) -> ShiftCodes:
        return materialize_shift(self.latents(params))[1]


class Quantizer:
    kind = "quantizer"
    latent_names = ("latent",)

    def __init__(self, spec: WeightProviderSpec):
        self.spec = spec
        self.cfg = QuantizerConfig(spec.quantizer, spec.bits, spec.exponent_bias, spec.zero_threshold)

    def init(self, shape, fan_in, rng, dtype, init="kaiming", sigma=1e-3):
        std = sigma if init == "low_variance" else kaiming_std(fan_in)
        return {"latent": rng.normal(0.0, std, size=shape).astype(dtype)}

    def weight(self, params):
        return quantize(params["latent"], self.cfg)

    def backward(self, grad_w, params):
        return {"latent": ste_backward_quantizer(grad_w, params["latent"], self.cfg)}

    def codes(self, params) -> ShiftCodes:
        return ShiftCodes.from_values(self.weight(params), self.spec.exponent_bias,
                                      allow_zero=self.cfg.kind == "sign_shift")


class FrozenShift:
    """Fixed discrete weights; nothing to train."""

    kind = "frozen_shift"
    latent_names = ()

    def __init__(self, spec: WeightProviderSpec):
        self.spec = spec

    def init(self, shape, fan_in, rng, dtype, init=None, sigma=None):
        return {}

    def weight(self, params):
        return params["frozen"]

    def backward(self, grad_w, params):
        return {}

    def codes(self, params) -> ShiftCodes:
        return ShiftCodes.from_values(params["frozen"], self.spec.exponent_bias,
                                      allow_zero=self.spec.allow_zero)


_PROVIDERS = {c.kind: c for c in (FullPrecision, DenseShift, Quantizer, FrozenShift)}


def make_provider(spec: WeightProviderSpec):
    return _PROVIDERS[spec.kind](spec)
