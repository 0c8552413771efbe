"""Fixed-point MAC kernels over power-of-two weight codes.

Both kernels compute ``sum_i x_i * w_i`` for 8-bit activations and codes
``w_i = sign_i * 2**S_i`` by flipping the sign of ``x_i``, shifting it left
by ``S_i`` and accumulating.  The shift-network kernel must also recognise
the zero code and feed 0 to the accumulator instead; the DenseShift kernel
has no such case and its loop body has no data-dependent branch.

The sign flip is the two's complement identity ``(x ^ -s) + s`` for
``s`` in {0, 1}.  Accumulation is in 64 bits: with ``|x| <= 128`` and
``S <= 7`` a single term is below ``2**15``, so overflow would need more than
``2**48`` terms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import OverflowRiskError
from ..reparam import num_scale_terms
from .packing import PackedWeightBlob

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None


@dataclass
class FixedActivations:
    """int8 values with a shared power-of-two scale: real = values * 2**exponent."""

    values: np.ndarray
    exponent: int = 0

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.size and (v.min() < -128 or v.max() > 127):
            raise ValueError("activation outside int8 range")
        self.values = v.astype(np.int8)

    @classmethod
    def quantize(cls, x, exponent=None):
        """Round reals onto int8 with a power-of-two step covering ``max|x|``."""
        x = np.asarray(x, dtype=np.float64)
        if exponent is None:
            peak = float(np.abs(x).max(initial=0.0))
            exponent = int(np.ceil(np.log2(peak / 127.0))) if peak > 0 else 0
        q = np.clip(np.rint(np.ldexp(x, -exponent)), -128, 127)
        return cls(q.astype(np.int8), exponent)

    def dequantize(self):
        return np.ldexp(self.values.astype(np.float64), self.exponent)


def _dense_py(x, code):
    s = (code & 1).astype(np.int64)
    v = x.astype(np.int64)
    return int((((v ^ -s) + s) << (code >> 1).astype(np.int64)).sum())


def _shift_py(x, code, zero_shift):
    s = (code & 1).astype(np.int64)
    S = (code >> 1).astype(np.int64)
    v = np.where(S == zero_shift, 0, x.astype(np.int64))
    return int((((v ^ -s) + s) << np.where(S == zero_shift, 0, S)).sum())


if numba is not None:
    @numba.njit(cache=True, nogil=True)
    def _dense_kernel(x, code):
        acc = np.int64(0)
        for i in range(x.shape[0]):
            c = np.int64(code[i])
            s = c & 1
            acc += ((np.int64(x[i]) ^ -s) + s) << (c >> 1)
        return acc

    @numba.njit(cache=True, nogil=True)
    def _shift_kernel(x, code, zero_shift):
        acc = np.int64(0)
        for i in range(x.shape[0]):
            c = np.int64(code[i])
            S = c >> 1
            # zero weight: bypass the flip/shift entirely
            if S != zero_shift:
                s = c & 1
                acc += ((np.int64(x[i]) ^ -s) + s) << S
        return acc

    @numba.njit(cache=True, nogil=True)
    def _gemm_dense(cols, code):
        M, K = cols.shape
        O = code.shape[0]
        out = np.zeros((M, O), dtype=np.int64)
        for m in range(M):
            for o in range(O):
                acc = np.int64(0)
                for k in range(K):
                    c = np.int64(code[o, k])
                    s = c & 1
                    acc += ((np.int64(cols[m, k]) ^ -s) + s) << (c >> 1)
                out[m, o] = acc
        return out

    @numba.njit(cache=True, nogil=True)
    def _gemm_shift(cols, code, zero_shift):
        M, K = cols.shape
        O = code.shape[0]
        out = np.zeros((M, O), dtype=np.int64)
        for m in range(M):
            for o in range(O):
                acc = np.int64(0)
                for k in range(K):
                    c = np.int64(code[o, k])
                    S = c >> 1
                    if S != zero_shift:
                        s = c & 1
                        acc += ((np.int64(cols[m, k]) ^ -s) + s) << S
                out[m, o] = acc
        return out
else:  # pragma: no cover
    _dense_kernel = _dense_py
    _shift_kernel = _shift_py

    def _gemm_dense(cols, code):
        return np.array([[_dense_py(r, c) for c in code] for r in cols], dtype=np.int64).reshape(
            cols.shape[0], code.shape[0])

    def _gemm_shift(cols, code, zero_shift):
        return np.array([[_shift_py(r, c, zero_shift) for c in code] for r in cols],
                        dtype=np.int64).reshape(cols.shape[0], code.shape[0])


def dense_kernel(x, code):
    """Branch-free MAC on int8 activations and uint8 codes."""
    return int(_dense_kernel(x, code))


def shift_kernel(x, code, zero_shift):
    """MAC with a per-element zero test; ``zero_shift`` is the reserved shift field."""
    return int(_shift_kernel(x, code, np.int64(zero_shift)))


def _values(x):
    return x.values if isinstance(x, FixedActivations) else np.asarray(x, dtype=np.int8)


def check_accumulator(length, bits):
    """Raise if ``length`` worst-case terms could overflow the 64-bit accumulator."""
    worst = length * 128 * 2 ** num_scale_terms(bits)
    if worst >= 2 ** 63:
        raise OverflowRiskError(f"{length} terms at {bits} bits may overflow 64-bit accumulator")


def dot_denseshift(x, w: PackedWeightBlob) -> int:
    """Integer accumulator; the real dot product is ``acc * 2**(x.exponent + w.exponent_bias)``."""
    if w.zero_code:
        raise ValueError("blob uses the zero-code layout; use dot_shift")
    xv = _values(x)
    if xv.size != w.count:
        raise ValueError(f"length mismatch: {xv.size} activations vs {w.count} weights")
    check_accumulator(w.count, w.bits)
    return dense_kernel(xv.ravel(), w.raw_codes())


def dot_shift(x, w: PackedWeightBlob) -> int:
    """Like :func:`dot_denseshift` for blobs in the zero-code layout."""
    if not w.zero_code:
        raise ValueError("blob has no zero code; use dot_denseshift")
    xv = _values(x)
    if xv.size != w.count:
        raise ValueError(f"length mismatch: {xv.size} activations vs {w.count} weights")
    check_accumulator(w.count, w.bits)
    return shift_kernel(xv.ravel(), w.raw_codes(), num_scale_terms(w.bits))


def gemm_codes(cols, code, zero_shift=None):
    """``out[m, o] = sum_k cols[m, k] * w[o, k]`` on int8 columns and uint8 codes."""
    cols = np.ascontiguousarray(cols, dtype=np.int8)
    code = np.ascontiguousarray(code, dtype=np.uint8)
    if zero_shift is None:
        return _gemm_dense(cols, code)
    return _gemm_shift(cols, code, np.int64(zero_shift))
