"""Quantizer-based baselines for training power-of-two weights.

Both quantizers round ``log2|w|`` to the nearest integer and clamp it into a
fixed exponent window.  They are adaptations of a symmetric PoT quantizer
and a conventional sign/shift quantizer, used only to reproduce the weight
freezing contrast; they make no attempt to match those methods' accuracies.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .reparam import num_scale_terms

KINDS = ("symmetric_pot", "sign_shift")


@dataclass(frozen=True)
class QuantizerConfig:
    kind: str = "symmetric_pot"
    bits: int = 3
    exponent_bias: int = 0
    zero_threshold: float | None = None  # sign_shift only; None -> half the smallest level

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown quantizer kind {self.kind!r}")
        num_scale_terms(self.bits)
        if self.zero_threshold is not None and self.zero_threshold < 0:
            raise ValueError("zero_threshold must be >= 0")

    @property
    def exponent_range(self) -> tuple[int, int]:
        """Inclusive (min, max) exponent of the nonzero levels."""
        T = num_scale_terms(self.bits)
        if self.kind == "sign_shift":
            # one code is spent on zero, so one magnitude fewer
            T -= 1
        return self.exponent_bias, self.exponent_bias + T

    @property
    def threshold(self) -> float:
        if self.zero_threshold is not None:
            return self.zero_threshold
        return 0.5 * 2.0 ** self.exponent_bias

    def levels(self) -> np.ndarray:
        lo, hi = self.exponent_range
        mags = 2.0 ** np.arange(lo, hi + 1)
        out = np.concatenate([-mags[::-1], mags])
        if self.kind == "sign_shift":
            out = np.insert(out, len(mags), 0.0)
        return out


def _round_exponent(a, lo, hi):
    with np.errstate(divide="ignore"):
        e = np.floor(np.log2(a) + 0.5)
    return np.clip(e, lo, hi)


def quantize_symmetric_pot(w, bits: int = 3, exponent_bias: int = 0):
    """Nearest signed power of two in ``{+-2**b .. +-2**(b+T)}``, never zero.

    ``sign(0)`` is taken as +1 and magnitudes below the smallest level snap up
    to it.
    """
    w = np.asarray(w)
    lo, hi = QuantizerConfig("symmetric_pot", bits, exponent_bias).exponent_range
    e = _round_exponent(np.abs(w), lo, hi)
    s = np.where(w < 0, -1.0, 1.0)
    return (s * np.exp2(e)).astype(w.dtype if w.dtype.kind == "f" else np.float64)


def quantize_sign_shift(w, bits: int = 3, zero_threshold: float | None = None,
                        exponent_bias: int = 0):
    """Shift-network quantizer: values in ``{0} U {+-2**e}``.

    ``|w| <= zero_threshold`` maps to 0; everything else to the nearest
    power of two within the (one magnitude shorter) exponent window.
    """
    w = np.asarray(w)
    cfg = QuantizerConfig("sign_shift", bits, exponent_bias, zero_threshold)
    lo, hi = cfg.exponent_range
    a = np.abs(w)
    e = _round_exponent(a, lo, hi)
    out = np.where(a <= cfg.threshold, 0.0, np.sign(w) * np.exp2(e))
    return out.astype(w.dtype if w.dtype.kind == "f" else np.float64)


def quantize(w, cfg: QuantizerConfig):
    if cfg.kind == "symmetric_pot":
        return quantize_symmetric_pot(w, cfg.bits, cfg.exponent_bias)
    return quantize_sign_shift(w, cfg.bits, cfg.zero_threshold, cfg.exponent_bias)


def ste_mask(w, cfg: QuantizerConfig):
    """True where the clamp is inactive, i.e. ``|w|`` does not exceed the top level."""
    _, hi = cfg.exponent_range
    return np.abs(np.asarray(w)) <= 2.0 ** hi


def ste_backward_quantizer(grad_out, w, cfg: QuantizerConfig):
    """Straight-through gradient: identity inside the clamp range, 0 outside."""
    grad_out = np.asarray(grad_out)
    return np.where(ste_mask(w, cfg), grad_out, 0).astype(grad_out.dtype, copy=False)
