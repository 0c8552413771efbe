"""Bit-packed storage for power-of-two weight codes.

Each weight takes ``n`` bits: bit 0 is the sign (1 = negative) and bits
``1..n-1`` hold the shift ``S``.  Codes are laid out LSB-first in 64-bit
little-endian words and may straddle word boundaries.

The conventional shift-network variant reserves the all-ones shift field as
the zero code, so it represents shifts ``0..T-1`` only (``T = 2**(n-1)-1``).

Binary layout::

    magic "DSHW" | version u8 | bits u8 | bias i8 | count u64 | payload u64[]

Bit 7 of the ``bits`` byte flags the zero-code variant.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import FormatError
from ..reparam import ShiftCode, ShiftCodes, num_scale_terms

MAGIC = b"DSHW"
VERSION = 1
WORD_BITS = 64
ZERO_FLAG = 0x80
_HEADER = struct.Struct("<4sBBbQ")


def num_words(count, bits):
    return -(-count * bits // WORD_BITS)


@dataclass
class PackedWeightBlob:
    bits: int
    exponent_bias: int
    count: int
    payload: np.ndarray  # uint64 words
    zero_code: bool = False

    def __post_init__(self):
        self.payload = np.asarray(self.payload, dtype=np.uint64)
        if len(self.payload) != num_words(self.count, self.bits):
            raise FormatError(
                f"payload has {len(self.payload)} words, expected {num_words(self.count, self.bits)}")

    @property
    def max_shift(self):
        T = num_scale_terms(self.bits)
        return T - 1 if self.zero_code else T

    def raw_codes(self) -> np.ndarray:
        """One uint8 code per weight."""
        return _unpack_codes(self.payload, self.count, self.bits)

    def to_bytes(self) -> bytes:
        flags = self.bits | (ZERO_FLAG if self.zero_code else 0)
        head = _HEADER.pack(MAGIC, VERSION, flags, self.exponent_bias, self.count)
        return head + self.payload.astype("<u8").tobytes()

    @classmethod
    def from_bytes(cls, buf, offset=0):
        """Parse a blob starting at ``offset``; returns ``(blob, end_offset)``."""
        if len(buf) - offset < _HEADER.size:
            raise FormatError("truncated packed-weight header")
        magic, version, flags, bias, count = _HEADER.unpack_from(buf, offset)
        if magic != MAGIC:
            raise FormatError(f"bad packed-weight magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"unsupported packed-weight version {version}")
        bits, zero = flags & 0x7F, bool(flags & ZERO_FLAG)
        num_scale_terms(bits)
        start = offset + _HEADER.size
        n = num_words(count, bits)
        end = start + 8 * n
        if len(buf) < end:
            raise FormatError("truncated packed-weight payload")
        payload = np.frombuffer(buf, dtype="<u8", count=n, offset=start).astype(np.uint64)
        return cls(bits, bias, count, payload, zero), end


def encode(sign, shift, zero=None, bits=3):
    """uint8 codes from sign (+-1) and shift arrays."""
    T = num_scale_terms(bits)
    sign = np.asarray(sign).ravel()
    shift = np.asarray(shift, dtype=np.int64).ravel()
    limit = T - 1 if zero is not None else T
    live = shift if zero is None else np.where(np.asarray(zero).ravel(), 0, shift)
    if live.size and (live.min() < 0 or live.max() > limit):
        raise OverflowError(f"shift outside [0, {limit}] for {bits}-bit codes")
    code = ((sign < 0).astype(np.uint8)) | (live.astype(np.uint8) << 1)
    if zero is not None:
        code = np.where(np.asarray(zero).ravel(), np.uint8(T << 1), code).astype(np.uint8)
    return code.astype(np.uint8)


def decode(code, bits, zero_code=False):
    """``(sign, shift, zero_mask)`` from uint8 codes."""
    code = np.asarray(code, dtype=np.uint8)
    sign = np.where(code & 1, -1, 1).astype(np.int8)
    shift = (code >> 1).astype(np.int64)
    zero = None
    if zero_code:
        zero = shift == num_scale_terms(bits)
        sign = np.where(zero, 1, sign).astype(np.int8)
        shift = np.where(zero, 0, shift)
    return sign, shift, zero


def _pack_codes(code, bits):
    code = code.astype(np.uint64)
    n = code.size
    words = np.zeros(num_words(n, bits), dtype=np.uint64)
    if n == 0:
        return words
    pos = np.arange(n, dtype=np.uint64) * np.uint64(bits)
    word = (pos // np.uint64(WORD_BITS)).astype(np.int64)
    off = pos % np.uint64(WORD_BITS)
    np.bitwise_or.at(words, word, code << off)
    spill = off + np.uint64(bits) > np.uint64(WORD_BITS)
    if spill.any():
        np.bitwise_or.at(words, word[spill] + 1, code[spill] >> (np.uint64(WORD_BITS) - off[spill]))
    return words


def _unpack_codes(words, count, bits):
    if count == 0:
        return np.zeros(0, dtype=np.uint8)
    pos = np.arange(count, dtype=np.uint64) * np.uint64(bits)
    word = (pos // np.uint64(WORD_BITS)).astype(np.int64)
    off = pos % np.uint64(WORD_BITS)
    mask = np.uint64((1 << bits) - 1)
    lo = words[word] >> off
    spill = off + np.uint64(bits) > np.uint64(WORD_BITS)
    if spill.any():
        hi_shift = np.uint64(WORD_BITS) - off[spill]
        lo[spill] |= words[word[spill] + 1] << hi_shift
    return (lo & mask).astype(np.uint8)


def pack(codes, bits, exponent_bias=None, zero_code=None) -> PackedWeightBlob:
    """Pack a :class:`ShiftCodes` (or a sequence of :class:`ShiftCode`).

    Raises ``OverflowError`` if a shift does not fit in ``bits - 1`` bits
    (one fewer magnitude for the zero-code variant).
    """
    if not isinstance(codes, ShiftCodes):
        codes = list(codes)
        bias = codes[0].exponent_bias if codes else 0
        codes = ShiftCodes(np.array([c.sign for c in codes], dtype=np.int8),
                           np.array([c.shift for c in codes], dtype=np.int64), bias)
    if exponent_bias is None:
        exponent_bias = codes.exponent_bias
    if zero_code is None:
        zero_code = codes.zero is not None
    zero = codes.zero if codes.zero is not None else (
        np.zeros(codes.sign.shape, bool) if zero_code else None)
    raw = encode(codes.sign, codes.shift, zero, bits)
    return PackedWeightBlob(bits, int(exponent_bias), raw.size, _pack_codes(raw, bits), bool(zero_code))


def unpack(blob: PackedWeightBlob) -> ShiftCodes:
    sign, shift, zero = decode(blob.raw_codes(), blob.bits, blob.zero_code)
    return ShiftCodes(sign, shift, blob.exponent_bias, zero)


def to_shift_variant(blob: PackedWeightBlob) -> PackedWeightBlob:
    """Re-encode a zero-free blob in the zero-code layout (shifts must be < T)."""
    return pack(unpack(blob), blob.bits, blob.exponent_bias, zero_code=True)


__all__ = ["PackedWeightBlob", "ShiftCode", "ShiftCodes", "pack", "unpack", "encode", "decode",
           "to_shift_variant"]
