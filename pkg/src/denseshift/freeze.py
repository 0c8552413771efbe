"""Weight-freezing diagnostics.

The freezing metric compares each filter (one output channel's weights) with
its value at initialisation and averages the cosine similarities over the
filters of a layer.  Values near 1 mean the filters never left their
initial direction; values near 0 mean training decorrelated them.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine.spec import WEIGHTED
from .reparam import LatentWeights, materialize_shift

COSINE_HEADER = ("layer", "epoch", "cosine")


@dataclass
class FilterSnapshot:
    layer: int
    epoch: int
    filters: np.ndarray  # (num_filters, filter_dim)

    @classmethod
    def from_weight(cls, layer, epoch, w):
        w = np.asarray(w, dtype=np.float64)
        return cls(layer, epoch, w.reshape(w.shape[0], -1).copy())


def filter_avg_cosine(init: FilterSnapshot, cur: FilterSnapshot) -> float:
    """Mean over filters of cos(init_f, cur_f); zero-norm filters count as 0."""
    a, b = np.asarray(init.filters, np.float64), np.asarray(cur.filters, np.float64)
    if a.shape != b.shape:
        raise ValueError(f"snapshot shapes differ: {a.shape} vs {b.shape}")
    if init.layer != cur.layer:
        raise ValueError(f"snapshots from different layers ({init.layer}, {cur.layer})")
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    denom = na * nb
    dots = np.einsum("ij,ij->i", a, b)
    cos = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)
    return float(np.clip(cos.mean(), -1.0, 1.0))


def monitored_tensor(net, i, source="weight"):
    """The per-layer tensor the metric looks at.

    ``"weight"`` is what multiplies activations (discrete for quantized
    layers); ``"latent"`` is the first continuous latent of the provider.
    """
    if source == "weight":
        return net.weight(i)
    names = net.providers[i].latent_names
    return net.params[i][names[0]] if names else net.weight(i)


def default_monitor_layers(spec):
    q = spec.quantized_layers()
    return q or [i for i, l in enumerate(spec.layers) if l.kind in WEIGHTED]


class CosineMonitor:
    """Holds initial snapshots and produces ``(layer, epoch, cosine)`` rows."""

    def __init__(self, net, layers=None, source="weight"):
        self.net = net
        self.layers = list(default_monitor_layers(net.spec) if layers is None else layers)
        self.source = source
        self.initial = {i: FilterSnapshot.from_weight(i, 0, monitored_tensor(net, i, source))
                        for i in self.layers}
        self.rows: list[tuple[int, int, float]] = []

    def snapshot(self, epoch):
        new = []
        for i in self.layers:
            cur = FilterSnapshot.from_weight(i, epoch, monitored_tensor(self.net, i, self.source))
            new.append((i, epoch, filter_avg_cosine(self.initial[i], cur)))
        self.rows.extend(new)
        return new

    def latest(self):
        out = {}
        for layer, _, cos in self.rows:
            out[layer] = cos
        return out


@dataclass
class TraceRecord:
    step: int
    layer: int
    index: int
    w_sign: float
    w_scale: tuple
    w_shift: float


def record_trace(net, sample_indices, step, out=None):
    """Append one record per sampled element of each dense-shift layer.

    ``sample_indices`` maps layer index to flat element indices.
    """
    out = [] if out is None else out
    for layer, idx in sample_indices.items():
        p = net.params[layer]
        idx = np.asarray(idx, dtype=np.int64)
        ws = p["w_sign"].reshape(-1)[idx]
        wt = p["w_scale"].reshape(p["w_scale"].shape[0], -1)[:, idx]
        w = net.weight(layer).reshape(-1)[idx]
        for k, flat in enumerate(idx):
            out.append(TraceRecord(step, layer, int(flat), float(ws[k]),
                                   tuple(float(v) for v in wt[:, k]), float(w[k])))
    return out


def choose_trace_samples(net, max_elements=64, seed=0):
    """Spread up to ``max_elements`` sampled elements over the dense-shift layers."""
    layers = [i for i in net.spec.quantized_layers() if net.providers[i].kind == "dense_shift"]
    if not layers:
        return {}
    rng = np.random.default_rng(seed)
    per = max(1, max_elements // len(layers))
    picks, left = {}, max_elements
    for i in layers:
        size = net.params[i]["w_sign"].size
        k = min(per, size, left)
        if k <= 0:
            break
        picks[i] = np.sort(rng.choice(size, size=k, replace=False))
        left -= k
    return picks


def trace_header(T):
    return ("step", "layer", "index", "w_sign") + tuple(f"w_{t}" for t in range(1, T + 1)) + ("w_shift",)


def write_cosine_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(COSINE_HEADER)
        for layer, epoch, cos in rows:
            w.writerow((layer, epoch, repr(float(cos))))


def read_cosine_csv(path):
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = tuple(next(r))
        if header != COSINE_HEADER:
            raise ValueError(f"unexpected cosine header {header}")
        return [(int(a), int(b), float(c)) for a, b, c in r]


def write_trace_csv(path, records, T):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(trace_header(T))
        for r in records:
            scale = [repr(v) for v in r.w_scale] + [""] * (T - len(r.w_scale))
            w.writerow([r.step, r.layer, r.index, repr(r.w_sign), *scale, repr(r.w_shift)])


def read_trace_csv(path):
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        T = len(header) - 5
        out = []
        for row in r:
            scale = tuple(float(v) for v in row[4:4 + T] if v != "")
            out.append(TraceRecord(int(row[0]), int(row[1]), int(row[2]), float(row[3]), scale,
                                   float(row[-1])))
        return out


def replay_trace(records, layer_bias):
    """Re-materialise each record's weight from its latents.

    ``layer_bias`` maps layer index to ``(bits, exponent_bias)``.  Returns the
    replayed weights in record order.
    """
    out = np.empty(len(records))
    for k, r in enumerate(records):
        bits, b = layer_bias[r.layer]
        lat = LatentWeights(np.array([r.w_sign]), np.array(r.w_scale).reshape(-1, 1), bits, b)
        out[k] = materialize_shift(lat)[0][0]
    return out


@dataclass
class TraceRecorder:
    """Samples dense-shift latents after every optimiser step."""

    net: object
    samples: dict = field(default_factory=dict)
    records: list = field(default_factory=list)

    @classmethod
    def for_network(cls, net, max_elements=64, seed=0):
        return cls(net, choose_trace_samples(net, max_elements, seed))

    @property
    def T(self):
        return max((self.net.params[i]["w_scale"].shape[0] for i in self.samples), default=0)

    def record(self, step):
        return record_trace(self.net, self.samples, step, self.records)

    def write(self, path):
        write_trace_csv(Path(path), self.records, self.T)
