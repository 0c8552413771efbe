"""Small reference architectures used by the experiments and the CLI.

Every builder takes the provider for quantized layers (``weight``) and keeps
the first convolution in full precision unless ``quantize_first`` is set.
"""
from __future__ import annotations

import math
from dataclasses import replace

from ..reparam import kaiming_std, num_scale_terms
from . import spec as S
from .network import fan_in
from .spec import FULL_PRECISION, WEIGHTED, NetworkSpec


def auto_exponent_bias(fan_in: int, bits: int, quantizer: str = "dense_shift") -> int:
    """Exponent bias that centres the level range (in log2) on the Kaiming std."""
    T = num_scale_terms(bits)
    if quantizer == "sign_shift":
        T -= 1
    return round(math.log2(kaiming_std(fan_in)) - T / 2)


def with_auto_bias(spec: NetworkSpec) -> NetworkSpec:
    """Copy of ``spec`` with every quantized layer's exponent bias set by :func:`auto_exponent_bias`."""
    for i, l in enumerate(spec.layers):
        if l.kind in WEIGHTED and l.weight.kind in ("dense_shift", "quantizer"):
            q = l.weight.quantizer if l.weight.kind == "quantizer" else "dense_shift"
            b = auto_exponent_bias(fan_in(l), l.weight.bits, q)
            spec = spec.with_layer(i, replace(l, weight=replace(l.weight, exponent_bias=b)))
    return spec


def _first(weight, quantize_first):
    return weight if quantize_first else FULL_PRECISION


def _head(weight, quantize_head):
    return weight if quantize_head else FULL_PRECISION


def lenet(weight=FULL_PRECISION, in_channels=1, size=28, classes=10, width=(8, 16, 128),
          quantize_first=False, quantize_head=True, head_weight=None) -> NetworkSpec:
    """LeNet-style: two 5x5 conv blocks, one hidden linear layer, classifier."""
    c1, c2, hidden = width
    s = ((size - 4) // 2 - 4) // 2
    layers = [
        S.conv2d(in_channels, c1, 5, bias=False, weight=_first(weight, quantize_first)),
        S.batchnorm(c1), S.relu(), S.maxpool(2),
        S.conv2d(c1, c2, 5, bias=False, weight=weight),
        S.batchnorm(c2), S.relu(), S.maxpool(2),
        S.flatten(),
        S.linear(c2 * s * s, hidden, bias=False, weight=weight),
        S.batchnorm(hidden), S.relu(),
        S.linear(hidden, classes, weight=_head(head_weight or weight, quantize_head)),
    ]
    return NetworkSpec((in_channels, size, size), tuple(layers))


def small_cnn(weight=FULL_PRECISION, in_channels=3, size=32, classes=10, width=(16, 32),
              quantize_first=False, quantize_head=True, head_weight=None) -> NetworkSpec:
    """Two 3x3 conv blocks (conv-BN-ReLU-pool) and a linear classifier."""
    c1, c2 = width
    layers = [
        S.conv2d(in_channels, c1, 3, padding=1, bias=False, weight=_first(weight, quantize_first)),
        S.batchnorm(c1), S.relu(), S.maxpool(2),
        S.conv2d(c1, c2, 3, padding=1, bias=False, weight=weight),
        S.batchnorm(c2), S.relu(), S.maxpool(2),
        S.flatten(),
        S.linear(c2 * (size // 4) ** 2, classes, weight=_head(head_weight or weight, quantize_head)),
    ]
    return NetworkSpec((in_channels, size, size), tuple(layers))


def mlp(dims, weight=FULL_PRECISION, quantize_first=True, batchnorm=False) -> NetworkSpec:
    """Fully connected net ``dims[0] -> ... -> dims[-1]`` with ReLU between layers."""
    layers = []
    for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        w = weight if (k > 0 or quantize_first) else FULL_PRECISION
        layers.append(S.linear(a, b, weight=w))
        if k < len(dims) - 2:
            if batchnorm:
                layers.append(S.batchnorm(b))
            layers.append(S.relu())
    return NetworkSpec((dims[0],), tuple(layers))


ARCHITECTURES = {"lenet": lenet, "small_cnn": small_cnn}
