"""Sign-scale decomposition of zero-free power-of-two weights.

A DenseShift weight is ``sign * 2**(S + b)`` with ``sign`` in {+1, -1},
``S`` an integer in ``[0, T]`` and ``b`` a per-layer exponent bias.  During
training neither ``sign`` nor ``S`` is stored directly.  Instead every weight
element owns ``T + 1`` real latents::

    sign = 2 * H(w_sign) - 1
    S_0 = 0,  S_t = H(w_t) * (S_{t-1} + 1),   t = 1..T
    S = S_T

where ``H`` is the Heaviside step with ``H(0) = 0``.  With ``n`` weight bits
there are ``T = 2**(n-1) - 1`` scale latents, so the ``2**n`` codes map onto
``{+-2**b, ..., +-2**(b+T)}`` and no code is ever zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

SUPPORTED_BITS = (2, 3, 4)
LN2 = math.log(2.0)


def num_scale_terms(bits: int) -> int:
    """Number of scale latents ``T`` for an ``bits``-bit weight."""
    if bits not in SUPPORTED_BITS:
        raise ValueError(f"bits must be one of {SUPPORTED_BITS}, got {bits}")
    return 2 ** (bits - 1) - 1


def heaviside(x):
    """1 where ``x > 0`` and 0 elsewhere (including exactly zero).

    Works on scalars and arrays; scalars come back as ``int``.
    """
    out = np.greater(x, 0).astype(np.int64)
    if out.ndim == 0:
        return int(out)
    return out


class ShiftCode(NamedTuple):
    """A single discrete weight ``sign * 2**(shift + exponent_bias)``."""

    sign: int
    shift: int
    exponent_bias: int = 0

    @property
    def value(self) -> float:
        return self.sign * 2.0 ** (self.shift + self.exponent_bias)


@dataclass
class ShiftCodes:
    """Elementwise codes of a weight tensor.

    ``zero`` is only set for tensors taken from a conventional shift network,
    where a reserved code stands for the value 0.  DenseShift tensors leave it
    as ``None``.
    """

    sign: np.ndarray
    shift: np.ndarray
    exponent_bias: int = 0
    zero: np.ndarray | None = None

    @property
    def shape(self):
        return self.sign.shape

    def __len__(self):
        return self.sign.size

    def values(self, dtype=np.float64) -> np.ndarray:
        out = self.sign.astype(dtype) * np.ldexp(
            np.ones(self.shift.shape, dtype=dtype), self.shift + self.exponent_bias
        )
        if self.zero is not None:
            out = np.where(self.zero, 0, out).astype(dtype)
        return out

    def __iter__(self):
        for s, p in zip(self.sign.ravel(), self.shift.ravel()):
            yield ShiftCode(int(s), int(p), self.exponent_bias)

    @classmethod
    def from_values(cls, w, exponent_bias: int = 0, allow_zero: bool = False) -> "ShiftCodes":
        """Recover codes from real weights that are exact signed powers of two."""
        w = np.asarray(w, dtype=np.float64)
        zero = w == 0
        if zero.any() and not allow_zero:
            raise ValueError("zero weight in a zero-free tensor")
        mant, exp = np.frexp(np.where(zero, 1.0, w))
        if not np.all(np.abs(mant) == 0.5):
            raise ValueError("weights are not all signed powers of two")
        shift = (exp - 1 - exponent_bias).astype(np.int64)
        shift = np.where(zero, 0, shift)
        if np.any(shift < 0):
            raise ValueError("weight below 2**exponent_bias")
        sign = np.where(w < 0, -1, 1).astype(np.int8)
        return cls(sign, shift, exponent_bias, zero if allow_zero else None)


@dataclass
class LatentWeights:
    """Full-precision latents backing one DenseShift weight tensor.

    ``w_scale[t - 1]`` holds the latent ``w_t``; its leading axis has length
    ``T = num_scale_terms(bits)``.
    """

    w_sign: np.ndarray
    w_scale: np.ndarray
    bits: int = 3
    exponent_bias: int = 0

    def __post_init__(self):
        T = num_scale_terms(self.bits)
        if self.w_scale.shape != (T,) + self.w_sign.shape:
            raise ValueError(
                f"w_scale shape {self.w_scale.shape} != {(T,) + self.w_sign.shape}"
            )

    @property
    def shape(self):
        return self.w_sign.shape

    @property
    def T(self) -> int:
        return self.w_scale.shape[0]

    def copy(self) -> "LatentWeights":
        return LatentWeights(self.w_sign.copy(), self.w_scale.copy(), self.bits, self.exponent_bias)


def shift_states(w_scale: np.ndarray) -> np.ndarray:
    """Stack of ``S_0..S_T`` (leading axis ``T + 1``) for the scale latents."""
    T = w_scale.shape[0]
    S = np.zeros((T + 1,) + w_scale.shape[1:], dtype=np.int64)
    for t in range(1, T + 1):
        S[t] = heaviside(w_scale[t - 1]) * (S[t - 1] + 1)
    return S


def materialize_shift(latents: LatentWeights, dtype=None):
    """Discrete weights and their codes from the latents.

    Returns ``(w_shift, codes)``; ``w_shift`` uses ``dtype`` (default: the
    latents' dtype).
    """
    dtype = dtype or latents.w_sign.dtype
    S = shift_states(latents.w_scale)[-1]
    sign = (2 * heaviside(latents.w_sign) - 1).astype(np.int8)
    codes = ShiftCodes(sign, S, latents.exponent_bias)
    return codes.values(dtype), codes


def backward_latents(grad_wshift, latents: LatentWeights, rescale: bool = True,
                     drop_ln2: bool = False):
    """Latent gradients from the gradient w.r.t. the discrete weights.

    The Heaviside steps are passed straight through (derivative 1).  For the
    sign latent the magnitude factor ``2**(S+b)`` is replaced by
    ``sqrt(S + 1)`` when ``rescale`` is on; scale latents always get the
    exact chain rule through ``2**S``.

    Returns ``(grad_w_sign, grad_w_scale)``.
    """
    g = np.asarray(grad_wshift)
    if g.shape != latents.shape:
        raise ValueError(f"gradient shape {g.shape} != weight shape {latents.shape}")
    S = shift_states(latents.w_scale)
    T = latents.T
    S_T = S[-1]
    magnitude = np.ldexp(np.ones(S_T.shape), S_T + latents.exponent_bias)

    if rescale:
        grad_sign = g * np.sqrt(S_T + 1.0)
    else:
        grad_sign = g * magnitude
    grad_sign = grad_sign.astype(latents.w_sign.dtype, copy=False)

    sign = 2.0 * heaviside(latents.w_sign) - 1.0
    dw_dS = g * sign * magnitude * (1.0 if drop_ln2 else LN2)
    grad_scale = np.empty_like(latents.w_scale)
    # suffix products of H(w_k) for k > t, built from the top down
    passthrough = np.ones(S_T.shape)
    for t in range(T, 0, -1):
        grad_scale[t - 1] = dw_dS * passthrough * (S[t - 1] + 1)
        passthrough = passthrough * heaviside(latents.w_scale[t - 1])
    return grad_sign, grad_scale


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def init_low_variance(shape, bits: int = 3, sigma: float = 1e-3, seed=None,
                      exponent_bias: int = 0, dtype=np.float64) -> LatentWeights:
    """All latents drawn i.i.d. from ``N(0, sigma**2)``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    shape = tuple(shape)
    T = num_scale_terms(bits)
    draws = _rng(seed).normal(0.0, sigma, size=(T + 1,) + shape).astype(dtype)
    return LatentWeights(draws[0], draws[1:], bits, exponent_bias)


def kaiming_std(fan_in: int) -> float:
    if fan_in <= 0:
        raise ValueError("fan_in must be positive")
    return math.sqrt(2.0 / fan_in)


def init_kaiming(shape, fan_in: int, bits: int = 3, seed=None,
                 exponent_bias: int = 0, dtype=np.float64) -> LatentWeights:
    """All latents drawn i.i.d. from ``N(0, 2 / fan_in)``."""
    std = kaiming_std(fan_in)
    shape = tuple(shape)
    T = num_scale_terms(bits)
    draws = _rng(seed).normal(0.0, std, size=(T + 1,) + shape).astype(dtype)
    return LatentWeights(draws[0], draws[1:], bits, exponent_bias)
