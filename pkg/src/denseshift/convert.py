"""Rewrite a shift network (weights in {0} U {+-2**p}) as a zero-free one.

Every input feature that meets a zero weight is duplicated.  Over a
duplicated feature each weight ``w`` becomes a pair of signed powers of two
that sums to ``w``::

    0        ->  (+2**b, -2**b)
    s * 2**p ->  (s * 2**(p+1), -s * 2**p)

and since both copies of the feature carry the same activation, the layer
output is unchanged.  The copy is produced by duplicating the matching output
rows of the previous weighted layer, carried through any channel-wise layers
(ReLU, pooling, batchnorm) in between.  At the network input a ``gather``
layer does the copying.

Layers are processed last to first so that row duplication requested by a
later layer is applied before the earlier layer's own columns are split.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .engine.network import Network, forward, infer_shapes
from .engine.spec import WEIGHTED, LayerSpec, NetworkSpec, WeightProviderSpec
from .errors import ConversionError, ShapeError
from .reparam import SUPPORTED_BITS, num_scale_terms


def _check_shift_values(w):
    w = np.asarray(w, dtype=np.float64)
    nz = w != 0
    mant, _ = np.frexp(w[nz])
    if not np.all(np.abs(mant) == 0.5):
        raise ConversionError("weight is neither zero nor a signed power of two")


def _split(col, zero_value):
    """The two addends for every weight of a duplicated input feature."""
    zero = col == 0
    first = np.where(zero, zero_value, 2 * col)
    second = np.where(zero, -zero_value, -col)
    return first.astype(col.dtype), second.astype(col.dtype)


def _expand_columns(W, in_order, zero_value):
    """Rebuild ``W`` over the input features listed in ``in_order``.

    Features listed once keep their weights; features listed twice get the
    split pair, first occurrence first.
    """
    W = np.asarray(W)
    seen = {}
    cols = []
    counts = np.bincount(in_order, minlength=W.shape[1])
    for j in in_order:
        col = W[:, j]
        if counts[j] == 1:
            cols.append(col)
            continue
        if j not in seen:
            seen[j] = _split(col, zero_value)
            cols.append(seen[j][0])
        else:
            cols.append(seen[j][1])
    return np.stack(cols, axis=1) if cols else W[:, :0]


def convert_layer(W, exponent_bias=0):
    """Zero-free ``(W', duplicated)`` for one weight tensor.

    ``W`` is ``(out, in)`` or ``(out, in, kh, kw)``.  ``duplicated`` lists
    the input features that gained a copy; ``W'`` takes the inputs in the
    order ``[0..in-1] + duplicated``.  The zero pair uses magnitude
    ``2**exponent_bias``.
    """
    W = np.asarray(W)
    _check_shift_values(W)
    per_col = (W == 0).reshape(W.shape[0], W.shape[1], -1).any(axis=(0, 2))
    dup = [int(j) for j in np.flatnonzero(per_col)]
    if not dup:
        return W.copy(), []
    order = np.array(list(range(W.shape[1])) + dup)
    return _expand_columns(W, order, 2.0 ** exponent_bias), dup


def _fit_format(codes_exp, bits, bias):
    """Smallest supported bit width >= ``bits`` holding exponents ``bias..max``."""
    top = int(codes_exp.max()) if codes_exp.size else bias
    for n in SUPPORTED_BITS:
        if n >= bits and top - bias <= num_scale_terms(n):
            return n
    raise ConversionError(f"exponent {top} out of reach with bias {bias} at <= {SUPPORTED_BITS[-1]} bits")


def _exponents(W):
    W = np.asarray(W, dtype=np.float64)
    _, e = np.frexp(W[W != 0])
    return e - 1


class _State:
    """Mutable copy of a network's layers and tensors during conversion."""

    def __init__(self, net: Network):
        self.layers = list(net.spec.layers)
        self.shapes = infer_shapes(net.spec)
        self.tensors = []
        for i, l in enumerate(self.layers):
            t = {k: np.array(v) for k, v in net.buffers[i].items()}
            if l.kind in WEIGHTED:
                t["weight"] = np.array(net.weight(i))
                if "bias" in net.params[i]:
                    t["bias"] = np.array(net.params[i]["bias"])
            else:
                t.update({k: np.array(v) for k, v in net.params[i].items()})
            self.tensors.append(t)
        self.prefix = None  # gather index inserted in front of the network


def _propagate(state: _State, i, chan_order):
    """Reorder the channels feeding layer ``i`` to ``chan_order``.

    Walks back through channel-wise layers to the previous weighted layer
    (its rows are duplicated), an existing gather, or the network input.
    """
    for k in range(i - 1, -1, -1):
        l = state.layers[k]
        if l.kind in ("relu", "maxpool", "avgpool"):
            continue
        if l.kind == "batchnorm":
            t = state.tensors[k]
            for name in list(t):
                t[name] = t[name][chan_order]
            state.layers[k] = replace(l, in_channels=len(chan_order))
            continue
        if l.kind in WEIGHTED:
            t = state.tensors[k]
            t["weight"] = t["weight"][chan_order]
            if "bias" in t:
                t["bias"] = t["bias"][chan_order]
            state.layers[k] = replace(l, out_channels=len(chan_order))
            return
        if l.kind == "gather":
            state.layers[k] = replace(l, index=tuple(np.asarray(l.index)[chan_order]))
            return
        raise ConversionError(f"layer {k}: cannot duplicate features through a {l.kind} layer")
    state.prefix = tuple(int(c) for c in chan_order)


def _input_order(state: _State, i, dup):
    """Feature order for layer ``i`` given the features that need a copy.

    Returns the order in layer ``i``'s input space, and propagates the
    corresponding channel order upstream.
    """
    l = state.layers[i]
    n_in = state.tensors[i]["weight"].shape[1]
    if l.kind == "linear" and i > 0 and state.layers[i - 1].kind == "flatten":
        c, h, w = state.shapes[i - 1]
        hw = h * w
        chans = sorted({j // hw for j in dup})
        chan_order = list(range(c)) + chans
        order = np.concatenate([np.arange(ch * hw, (ch + 1) * hw) for ch in chan_order])
        _propagate(state, i - 1, chan_order)
        return order
    order = np.array(list(range(n_in)) + list(dup), dtype=np.int64)
    _propagate(state, i, order)
    return order


def convert_network(net: Network) -> Network:
    """Zero-free network computing the same function as ``net``.

    Quantized layers of the result use fixed ``frozen_shift`` weights with
    the source exponent bias; full-precision layers are carried over.
    """
    state = _State(net)
    weighted = [i for i, l in enumerate(state.layers) if l.kind in WEIGHTED]
    for i in reversed(weighted):
        l = state.layers[i]
        if not l.weight.quantized:
            continue
        W = state.tensors[i]["weight"]
        try:
            _check_shift_values(W)
        except ConversionError as e:
            raise ConversionError(f"layer {i}: {e}") from None
        bias = l.weight.exponent_bias
        exps = _exponents(W)
        if exps.size and exps.min() < bias:
            raise ConversionError(f"layer {i}: weight below 2**{bias}")
        per_col = (W == 0).reshape(W.shape[0], W.shape[1], -1).any(axis=(0, 2))
        dup = [int(j) for j in np.flatnonzero(per_col)]
        if dup:
            order = _input_order(state, i, dup)
            W = _expand_columns(W, order, np.asarray(2.0 ** bias, W.dtype))
            state.tensors[i]["weight"] = W
            l = replace(state.layers[i], in_channels=W.shape[1])
        bits = _fit_format(_exponents(W), l.weight.bits, bias)
        state.layers[i] = replace(l, weight=WeightProviderSpec(
            "frozen_shift", bits=bits, exponent_bias=bias, allow_zero=False))
    layers = state.layers
    tensors = state.tensors
    if state.prefix is not None:
        layers = [LayerSpec("gather", index=state.prefix)] + layers
        tensors = [{}] + tensors
    spec = NetworkSpec(net.spec.input_shape, tuple(layers))
    out = Network(spec, dtype=net.dtype, initialize=False)
    for k, (l, t) in enumerate(zip(layers, tensors)):
        if l.kind in WEIGHTED:
            key = "frozen" if l.weight.kind == "frozen_shift" else "weight"
            if l.weight.kind == "frozen_shift" or not l.weight.quantized:
                out.params[k][key] = t["weight"].astype(net.dtype)
            if "bias" in t:
                out.params[k]["bias"] = t["bias"].astype(net.dtype)
        elif l.kind == "batchnorm":
            out.params[k] = {"gamma": t["gamma"], "beta": t["beta"]}
            out.buffers[k] = {"running_mean": t["running_mean"], "running_var": t["running_var"]}
    out.eval()
    return out


def shift_network_from(net: Network) -> Network:
    """Freeze every quantized layer of ``net`` to its current discrete weights.

    Layers that can hold zeros are marked ``allow_zero``.
    """
    layers = list(net.spec.layers)
    for i, l in enumerate(layers):
        if l.kind in WEIGHTED and l.weight.quantized:
            w = l.weight
            zero = w.kind == "frozen_shift" and w.allow_zero or (
                w.kind == "quantizer" and w.quantizer == "sign_shift")
            layers[i] = replace(l, weight=WeightProviderSpec(
                "frozen_shift", bits=w.bits, exponent_bias=w.exponent_bias, allow_zero=zero))
    out = Network(NetworkSpec(net.spec.input_shape, tuple(layers)), dtype=net.dtype, initialize=False)
    for i, l in enumerate(layers):
        if l.kind in WEIGHTED:
            if l.weight.quantized:
                out.params[i]["frozen"] = np.array(net.weight(i))
            else:
                out.params[i]["weight"] = np.array(net.params[i]["weight"])
            if "bias" in net.params[i]:
                out.params[i]["bias"] = np.array(net.params[i]["bias"])
        else:
            out.params[i] = {k: np.array(v) for k, v in net.params[i].items()}
            out.buffers[i] = {k: np.array(v) for k, v in net.buffers[i].items()}
    out.training = net.training
    return out


def as_float64(net: Network) -> Network:
    """Inference copy of ``net`` with every tensor in float64."""
    out = Network(net.spec, dtype=np.float64, initialize=False)
    for i in range(len(net.spec.layers)):
        out.params[i] = {k: np.asarray(v, np.float64) for k, v in net.params[i].items()}
        out.buffers[i] = {k: np.asarray(v, np.float64) for k, v in net.buffers[i].items()}
    out.eval()
    return out


@dataclass
class EquivalenceReport:
    max_abs_diff: float
    passed: bool
    n_inputs: int
    tol: float

    def to_dict(self):
        return {"max_abs_diff": self.max_abs_diff, "pass": self.passed,
                "n_inputs": self.n_inputs, "tol": self.tol}


def verify_equivalence(a: Network, b: Network, n_inputs=100, tol=1e-5, seed=0,
                       integer_inputs=False) -> EquivalenceReport:
    """Compare ``a`` and ``b`` in inference mode on random inputs.

    Both are evaluated in float64.  ``integer_inputs`` draws small integers
    instead of standard normals, which makes every product exact.
    """
    if tuple(a.spec.input_shape) != tuple(b.spec.input_shape):
        raise ShapeError(f"input shapes differ: {a.spec.input_shape} vs {b.spec.input_shape}")
    if a.shapes[-1] != b.shapes[-1]:
        raise ShapeError(f"output shapes differ: {a.shapes[-1]} vs {b.shapes[-1]}")
    rng = np.random.default_rng(seed)
    shape = (n_inputs,) + tuple(a.spec.input_shape)
    if integer_inputs:
        x = rng.integers(-8, 9, size=shape).astype(np.float64)
    else:
        x = rng.standard_normal(shape)
    ya = forward(as_float64(a), x)[0]
    yb = forward(as_float64(b), x)[0]
    diff = float(np.abs(ya - yb).max()) if ya.size else 0.0
    return EquivalenceReport(diff, bool(diff <= tol), n_inputs, tol)


def is_zero_free(net: Network) -> bool:
    return all(not np.any(net.weight(i) == 0) for i in net.spec.quantized_layers())
