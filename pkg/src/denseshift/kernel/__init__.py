"""Integer inference path: packed weight storage, MAC kernels, benchmark."""
from .bench import BenchReport, bench
from .conv import ConvGeometry, conv_forward_packed, linear_forward_packed
from .dot import FixedActivations, dense_kernel, dot_denseshift, dot_shift, shift_kernel
from .packing import PackedWeightBlob, pack, to_shift_variant, unpack

__all__ = [
    "BenchReport", "bench", "ConvGeometry", "conv_forward_packed", "linear_forward_packed",
    "FixedActivations", "dense_kernel", "dot_denseshift", "dot_shift", "shift_kernel",
    "PackedWeightBlob", "pack", "to_shift_variant", "unpack",
]
