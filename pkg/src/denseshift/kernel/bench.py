"""Latency micro-benchmark for the two MAC kernels.

Trials of the two kernels are interleaved so clock drift and cache state hit
both alike; warm-up calls (including JIT compilation) are discarded.
"""
from __future__ import annotations

import json
import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np

from ..reparam import num_scale_terms
from .dot import dense_kernel, shift_kernel

KERNELS = ("shift", "denseshift")
MIN_TRIALS = 30


@dataclass
class KernelStats:
    kernel: str
    mean_ns: float
    stddev_ns: float
    median_ns: float
    checksum: int


@dataclass
class BenchReport:
    length: int
    trials: int
    bits: int
    zero_fraction: float
    shift: KernelStats
    denseshift: KernelStats

    @property
    def ratio(self):
        """Shift latency over DenseShift latency (> 1 means DenseShift is faster)."""
        return self.shift.mean_ns / self.denseshift.mean_ns

    def to_json(self):
        d = asdict(self)
        d["ratio"] = self.ratio
        return json.dumps(d, sort_keys=True)


def make_bench_data(length, bits=4, zero_fraction=0.0, seed=0):
    """int8 activations plus matching DenseShift and shift-variant codes.

    Shifts are drawn from ``0..T-1`` so both code sets denote the same
    weights; a ``zero_fraction`` of the shift-variant codes is then replaced
    by the zero code.
    """
    T = num_scale_terms(bits)
    rng = np.random.default_rng(seed)
    x = rng.integers(-128, 128, size=length, dtype=np.int16).astype(np.int8)
    sign = rng.integers(0, 2, size=length).astype(np.uint8)
    shift = rng.integers(0, max(T, 1), size=length).astype(np.uint8)
    dense = (sign | (shift << 1)).astype(np.uint8)
    sparse = dense.copy()
    if zero_fraction > 0:
        z = rng.random(length) < zero_fraction
        sparse[z] = np.uint8(T << 1)
    return x, dense, sparse


def _run(fn, trials, warmup):
    for _ in range(warmup):
        fn()
    times = np.empty(trials, dtype=np.int64)
    check = 0
    for t in range(trials):
        t0 = time.perf_counter_ns()
        r = fn()
        times[t] = time.perf_counter_ns() - t0
        check = (check + r) & 0xFFFFFFFFFFFF
    return times, check


def bench(length=4096, trials=1000, bits=4, warmup=100, zero_fraction=0.0, seed=0,
          rounds=100) -> BenchReport:
    """Time both kernels on the same data; ``trials`` timed calls each.

    Trials are split into ``rounds`` alternating blocks (shift, denseshift,
    shift, ...).
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    if trials < MIN_TRIALS:
        raise ValueError(f"trials must be >= {MIN_TRIALS}")
    T = num_scale_terms(bits)
    x, dense, sparse = make_bench_data(length, bits, zero_fraction, seed)
    fns = {
        "shift": lambda: shift_kernel(x, sparse, T),
        "denseshift": lambda: dense_kernel(x, dense),
    }
    rounds = max(1, min(rounds, trials))
    per = [trials // rounds + (1 if r < trials % rounds else 0) for r in range(rounds)]
    samples = {k: [] for k in KERNELS}
    checks = {k: 0 for k in KERNELS}
    for r, n in enumerate(per):
        order = KERNELS if r % 2 == 0 else KERNELS[::-1]
        for k in order:
            times, c = _run(fns[k], n, warmup if r == 0 else 5)
            samples[k].append(times)
            checks[k] = (checks[k] + c) & 0xFFFFFFFFFFFF
    stats = {}
    for k in KERNELS:
        t = np.concatenate(samples[k]).astype(np.float64)
        stats[k] = KernelStats(k, float(t.mean()), float(statistics.pstdev(t)), float(np.median(t)),
                               int(checks[k]))
    return BenchReport(length, trials, bits, zero_fraction, stats["shift"], stats["denseshift"])
