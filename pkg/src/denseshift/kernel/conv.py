"""Convolution and linear layers evaluated through the integer MAC kernels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine.functional import conv_output_size, im2col
from ..reparam import num_scale_terms
from .dot import FixedActivations, check_accumulator, gemm_codes
from .packing import PackedWeightBlob


@dataclass(frozen=True)
class ConvGeometry:
    out_channels: int
    in_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0

    @property
    def fan_in(self):
        return self.in_channels * self.kernel_size ** 2


def _codes_matrix(w: PackedWeightBlob, rows, cols):
    if w.count != rows * cols:
        raise ValueError(f"blob holds {w.count} weights, geometry needs {rows * cols}")
    return w.raw_codes().reshape(rows, cols)


def conv_forward_packed(x: FixedActivations, w: PackedWeightBlob, geometry: ConvGeometry):
    """Integer output ``(N, O, OH, OW)``; real value is ``out * 2**(x.exponent + w.exponent_bias)``."""
    xv = x.values if isinstance(x, FixedActivations) else np.asarray(x, np.int8)
    if xv.ndim != 4 or xv.shape[1] != geometry.in_channels:
        raise ValueError(f"expected (N, {geometry.in_channels}, H, W) activations, got {xv.shape}")
    g = geometry
    check_accumulator(g.fan_in, w.bits)
    code = _codes_matrix(w, g.out_channels, g.fan_in)
    N, _, H, W = xv.shape
    if conv_output_size(H, g.kernel_size, g.stride, g.padding) < 1:
        raise ValueError("kernel larger than padded input")
    cols, OH, OW = im2col(xv, g.kernel_size, g.kernel_size, g.stride, g.padding)
    zero_shift = num_scale_terms(w.bits) if w.zero_code else None
    out = gemm_codes(cols, code, zero_shift)
    return np.ascontiguousarray(out.reshape(N, OH, OW, g.out_channels).transpose(0, 3, 1, 2))


def linear_forward_packed(x: FixedActivations, w: PackedWeightBlob, out_features: int):
    """Integer output ``(N, out_features)`` for ``(N, in_features)`` activations."""
    xv = x.values if isinstance(x, FixedActivations) else np.asarray(x, np.int8)
    if xv.ndim != 2:
        raise ValueError("linear activations must be (N, features)")
    check_accumulator(xv.shape[1], w.bits)
    code = _codes_matrix(w, out_features, xv.shape[1])
    zero_shift = num_scale_terms(w.bits) if w.zero_code else None
    return gemm_codes(xv, code, zero_shift)
