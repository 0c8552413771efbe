"""Single-file model format.

Layout (all integers little-endian)::

    magic "DSNM" | version u16 | header_len u32 | header (UTF-8 JSON)
    record*      | digest (8 bytes, blake2b over everything before it)

The header holds the network spec, free-form metadata (e.g. input
normalisation) and a table describing each record in order.  Each record is
a u64 byte length followed by either a packed weight blob (quantized layers)
or the raw bytes of an array.  Quantized layers are stored as their discrete
weights, so a loaded model carries ``frozen_shift`` providers.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import replace
from pathlib import Path

import numpy as np

from .engine.network import Network
from .engine.spec import WEIGHTED, NetworkSpec, WeightProviderSpec
from .errors import FormatError
from .kernel.packing import PackedWeightBlob, pack, unpack
from .reparam import ShiftCodes

MAGIC = b"DSNM"
VERSION = 1
DIGEST_SIZE = 8
_PREFIX = struct.Struct("<4sHI")
_LEN = struct.Struct("<Q")


def digest(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=DIGEST_SIZE).digest()


def frozen_provider(w: WeightProviderSpec) -> WeightProviderSpec:
    """The inference-only provider a quantized layer is stored as."""
    if w.kind == "frozen_shift":
        return w
    zero = w.kind == "quantizer" and w.quantizer == "sign_shift"
    return WeightProviderSpec("frozen_shift", bits=w.bits, exponent_bias=w.exponent_bias,
                              allow_zero=zero)


def _array_record(arr):
    arr = np.ascontiguousarray(arr)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    return {"dtype": dt.str, "shape": list(arr.shape)}, arr.astype(dt).tobytes()


def _layer_records(net: Network, i):
    l = net.spec.layers[i]
    out = []
    if l.kind in WEIGHTED:
        if l.weight.quantized:
            prov = frozen_provider(l.weight)
            w = np.asarray(net.weight(i))
            try:
                codes = ShiftCodes.from_values(w.ravel(), prov.exponent_bias, allow_zero=prov.allow_zero)
                blob = pack(codes, prov.bits, zero_code=prov.allow_zero)
            except (ValueError, OverflowError) as e:
                raise FormatError(f"layer {i}: weights do not fit {prov.bits}-bit codes: {e}") from None
            out.append(({"name": "frozen", "kind": "packed", "shape": list(w.shape),
                         "dtype": np.dtype(net.dtype).str}, blob.to_bytes()))
        else:
            meta, raw = _array_record(net.params[i]["weight"])
            out.append(({"name": "weight", "kind": "array", **meta}, raw))
        if "bias" in net.params[i]:
            meta, raw = _array_record(net.params[i]["bias"])
            out.append(({"name": "bias", "kind": "array", **meta}, raw))
    else:
        for src in (net.params[i], net.buffers[i]):
            for name in sorted(src):
                meta, raw = _array_record(src[name])
                out.append(({"name": name, "kind": "array", **meta}, raw))
    for meta, _ in out:
        meta["layer"] = i
    return out


def stored_spec(spec: NetworkSpec) -> NetworkSpec:
    layers = tuple(replace(l, weight=frozen_provider(l.weight))
                   if l.kind in WEIGHTED and l.weight.quantized else l for l in spec.layers)
    return NetworkSpec(spec.input_shape, layers)


def dumps(net: Network, metadata=None) -> bytes:
    records = [r for i in range(len(net.spec.layers)) for r in _layer_records(net, i)]
    header = {
        "spec": stored_spec(net.spec).to_dict(),
        "metadata": metadata or {},
        "records": [m for m, _ in records],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [_PREFIX.pack(MAGIC, VERSION, len(hbytes)), hbytes]
    for _, raw in records:
        parts += [_LEN.pack(len(raw)), raw]
    body = b"".join(parts)
    return body + digest(body)


def loads(buf: bytes, dtype=None):
    """``(network, metadata)`` from bytes produced by :func:`dumps`."""
    buf = bytes(buf)
    if len(buf) < _PREFIX.size + DIGEST_SIZE:
        raise FormatError("model file truncated")
    body, tail = buf[:-DIGEST_SIZE], buf[-DIGEST_SIZE:]
    if digest(body) != tail:
        raise FormatError("model checksum mismatch")
    magic, version, hlen = _PREFIX.unpack_from(body, 0)
    if magic != MAGIC:
        raise FormatError(f"bad model magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported model version {version}")
    off = _PREFIX.size
    try:
        header = json.loads(body[off:off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"bad model header: {e}") from None
    off += hlen
    spec = NetworkSpec.from_dict(header["spec"])
    records = header["records"]
    dts = [np.dtype(r["dtype"]) for r in records if r["kind"] == "packed"]
    dtype = np.dtype(dtype) if dtype is not None else (dts[0] if dts else np.dtype(np.float32))
    net = Network(spec, dtype=dtype, initialize=False)
    for r in records:
        if off + _LEN.size > len(body):
            raise FormatError("model record truncated")
        (n,) = _LEN.unpack_from(body, off)
        off += _LEN.size
        raw = body[off:off + n]
        if len(raw) != n:
            raise FormatError("model record truncated")
        off += n
        i, name = r["layer"], r["name"]
        if r["kind"] == "packed":
            blob, end = PackedWeightBlob.from_bytes(raw)
            if end != n:
                raise FormatError(f"layer {i}: trailing bytes after packed weights")
            arr = unpack(blob).values(dtype).reshape(r["shape"])
        else:
            arr = np.frombuffer(raw, dtype=np.dtype(r["dtype"])).reshape(r["shape"]).copy()
        target = net.buffers[i] if name in ("running_mean", "running_var") else net.params[i]
        target[name] = arr
    if off != len(body):
        raise FormatError("unexpected trailing bytes in model file")
    net.eval()
    return net, header.get("metadata", {})


def save(path, net: Network, metadata=None) -> str:
    """Write the model; returns the hex digest stored in the file."""
    data = dumps(net, metadata)
    Path(path).write_bytes(data)
    return data[-DIGEST_SIZE:].hex()


def load(path, dtype=None):
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read model file {path}: {e}") from None
    return loads(data, dtype)


def file_checksum(path) -> str:
    """Hex digest stored at the end of a model file."""
    return Path(path).read_bytes()[-DIGEST_SIZE:].hex()
