"""Network inference with quantized layers evaluated by the integer kernels.

Inputs to every quantized conv/linear layer are rounded to int8 with a
power-of-two step chosen per sample, the layer runs through the packed MAC
kernel, and the integer result is scaled back to real values.  All other
layers use the float engine.
"""
from __future__ import annotations

import numpy as np

from ..engine import functional as F
from ..engine.network import Network
from ..modelfile import frozen_provider
from ..reparam import ShiftCodes
from .conv import ConvGeometry, conv_forward_packed, linear_forward_packed
from .packing import pack


def sample_exponents(x):
    """Per-sample exponent ``e`` so that ``max|x| <= 127 * 2**e``."""
    peak = np.abs(x.reshape(len(x), -1)).max(axis=1).astype(np.float64)
    e = np.zeros(len(x), dtype=np.int64)
    live = peak > 0
    e[live] = np.ceil(np.log2(peak[live] / 127.0)).astype(np.int64)
    return e


def quantize_per_sample(x):
    """``(int8 values, exponents)`` for a batch of real activations."""
    e = sample_exponents(x)
    shape = (-1,) + (1,) * (x.ndim - 1)
    q = np.clip(np.rint(np.ldexp(x.astype(np.float64), -e.reshape(shape))), -128, 127)
    return q.astype(np.int8), e


class PackedRunner:
    """Inference-only evaluation of ``net`` through the packed kernels."""

    def __init__(self, net: Network):
        self.net = net
        self.blobs = {}
        for i in net.spec.quantized_layers():
            prov = frozen_provider(net.spec.layers[i].weight)
            w = np.asarray(net.weight(i))
            codes = ShiftCodes.from_values(w.ravel(), prov.exponent_bias, allow_zero=prov.allow_zero)
            self.blobs[i] = pack(codes, prov.bits, zero_code=prov.allow_zero)

    def _packed_layer(self, i, x):
        l = self.net.spec.layers[i]
        blob = self.blobs[i]
        q, e = quantize_per_sample(x)
        if l.kind == "conv2d":
            g = ConvGeometry(l.out_channels, l.in_channels, l.kernel_size, l.stride, l.padding)
            acc = conv_forward_packed(q, blob, g)
        else:
            acc = linear_forward_packed(q, blob, l.out_channels)
        shape = (-1,) + (1,) * (acc.ndim - 1)
        y = np.ldexp(acc.astype(np.float64), (e + blob.exponent_bias).reshape(shape))
        b = self.net.params[i].get("bias")
        if b is not None:
            y = y + (b.reshape(1, -1, 1, 1) if l.kind == "conv2d" else b)
        return y.astype(self.net.dtype)

    def forward(self, x):
        net = self.net
        x = np.asarray(x, dtype=net.dtype)
        for i, l in enumerate(net.spec.layers):
            p = net.params[i]
            if i in self.blobs:
                x = self._packed_layer(i, x)
            elif l.kind == "conv2d":
                x = F.conv2d_forward(x, net.weight(i), p.get("bias"), l.stride, l.padding)[0]
            elif l.kind == "linear":
                x = F.linear_forward(x, net.weight(i), p.get("bias"))[0]
            elif l.kind == "batchnorm":
                b = net.buffers[i]
                x = F.batchnorm_forward(x, p["gamma"], p["beta"], b["running_mean"], b["running_var"],
                                        False, l.eps, l.bn_momentum)[0]
            elif l.kind == "relu":
                x = F.relu_forward(x)[0]
            elif l.kind == "maxpool":
                x = F.maxpool_forward(x, l.kernel_size, l.stride)[0]
            elif l.kind == "avgpool":
                x = F.avgpool_forward(x, l.kernel_size, l.stride)[0]
            elif l.kind == "flatten":
                x = x.reshape(len(x), -1)
            elif l.kind == "gather":
                x = x[:, list(l.index)]
        return x

    def predict(self, x, batch_size=500):
        out = [self.forward(x[k:k + batch_size]) for k in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.net.num_classes), self.net.dtype)
