"""Network state plus the forward/backward passes over a :class:`NetworkSpec`."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError, StaleCacheError
from . import functional as F
from .providers import make_provider
from .spec import WEIGHTED, LayerSpec, NetworkSpec


def infer_shapes(spec: NetworkSpec) -> list[tuple]:
    """Per-sample output shape of every layer (index 0 is the input)."""
    shapes = [tuple(spec.input_shape)]
    for i, l in enumerate(spec.layers):
        s = shapes[-1]
        if l.kind == "conv2d":
            if len(s) != 3 or s[0] != l.in_channels:
                raise ShapeError(f"conv2d expects ({l.in_channels}, H, W), got {s}", layer=i)
            oh = F.conv_output_size(s[1], l.kernel_size, l.stride, l.padding)
            ow = F.conv_output_size(s[2], l.kernel_size, l.stride, l.padding)
            if oh < 1 or ow < 1:
                raise ShapeError(f"kernel larger than padded input {s}", layer=i)
            s = (l.out_channels, oh, ow)
        elif l.kind == "linear":
            if len(s) != 1 or s[0] != l.in_channels:
                raise ShapeError(f"linear expects ({l.in_channels},), got {s}", layer=i)
            s = (l.out_channels,)
        elif l.kind == "batchnorm":
            if s[0] != l.in_channels:
                raise ShapeError(f"batchnorm expects {l.in_channels} channels, got {s}", layer=i)
        elif l.kind in ("maxpool", "avgpool"):
            if len(s) != 3:
                raise ShapeError(f"{l.kind} needs (C, H, W) input, got {s}", layer=i)
            s = (s[0], (s[1] - l.kernel_size) // l.stride + 1, (s[2] - l.kernel_size) // l.stride + 1)
            if s[1] < 1 or s[2] < 1:
                raise ShapeError("pool window larger than input", layer=i)
        elif l.kind == "flatten":
            s = (int(np.prod(s)),)
        elif l.kind == "gather":
            if not l.index or max(l.index) >= s[0] or min(l.index) < 0:
                raise ShapeError(f"gather index out of range for {s}", layer=i)
            s = (len(l.index),) + s[1:]
        shapes.append(s)
    return shapes


def fan_in(layer: LayerSpec) -> int:
    if layer.kind == "conv2d":
        return layer.in_channels * layer.kernel_size ** 2
    return layer.in_channels


def weight_shape(layer: LayerSpec) -> tuple:
    if layer.kind == "conv2d":
        return (layer.out_channels, layer.in_channels, layer.kernel_size, layer.kernel_size)
    return (layer.out_channels, layer.in_channels)


@dataclass
class ForwardCache:
    version: int
    training: bool
    layers: list


class Network:
    """Parameters and buffers for every layer of ``spec``.

    ``init`` picks the latent initialisation of quantized layers
    (``"kaiming"`` or ``"low_variance"`` with std ``sigma``); full-precision
    weights always use Kaiming normal.
    """

    def __init__(self, spec: NetworkSpec, seed=0, init="kaiming", sigma=1e-3,
                 dtype=np.float32, initialize=True):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.shapes = infer_shapes(spec)
        self.providers = [make_provider(l.weight) if l.kind in WEIGHTED else None for l in spec.layers]
        self.params: list[dict] = [{} for _ in spec.layers]
        self.buffers: list[dict] = [{} for _ in spec.layers]
        self.training = True
        self.version = 0
        self.init_strategy = init
        if initialize:
            self._initialize(seed, init, sigma)

    def _initialize(self, seed, init, sigma):
        streams = np.random.SeedSequence(seed).spawn(len(self.spec.layers))
        for i, (l, p) in enumerate(zip(self.spec.layers, self.providers)):
            rng = np.random.default_rng(streams[i])
            if l.kind in WEIGHTED:
                how = init if l.weight.quantized else "kaiming"
                self.params[i].update(p.init(weight_shape(l), fan_in(l), rng, self.dtype, how, sigma))
                if l.bias:
                    self.params[i]["bias"] = np.zeros(l.out_channels, self.dtype)
            elif l.kind == "batchnorm":
                self.params[i]["gamma"] = np.ones(l.in_channels, self.dtype)
                self.params[i]["beta"] = np.zeros(l.in_channels, self.dtype)
                self.buffers[i]["running_mean"] = np.zeros(l.in_channels, self.dtype)
                self.buffers[i]["running_var"] = np.ones(l.in_channels, self.dtype)

    # -- modes -------------------------------------------------------------
    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    # -- parameters --------------------------------------------------------
    def parameters(self):
        """``(layer_index, name, array)`` for every trainable tensor."""
        for i, p in enumerate(self.params):
            for name in sorted(p):
                if name != "frozen":
                    yield i, name, p[name]

    def weight(self, i):
        """The tensor that multiplies activations in layer ``i``."""
        return self.providers[i].weight(self.params[i])

    def codes(self, i):
        return self.providers[i].codes(self.params[i])

    def mark_updated(self):
        self.version += 1

    def state_arrays(self):
        for i in range(len(self.spec.layers)):
            for name in sorted(self.params[i]):
                yield f"{i}.{name}", self.params[i][name]
            for name in sorted(self.buffers[i]):
                yield f"{i}.{name}", self.buffers[i][name]

    def checksum(self) -> str:
        h = hashlib.blake2b(digest_size=8)
        for key, arr in self.state_arrays():
            h.update(key.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    @property
    def num_classes(self):
        return self.shapes[-1][0]

    # -- passes ------------------------------------------------------------
    def forward(self, x):
        return forward(self, x)

    def backward(self, cache, loss_grad):
        return backward(self, cache, loss_grad)

    def predict(self, x, batch_size=1000):
        was = self.training
        self.eval()
        try:
            out = [forward(self, x[k:k + batch_size])[0] for k in range(0, len(x), batch_size)]
        finally:
            self.training = was
        return np.concatenate(out) if out else np.zeros((0, self.num_classes), self.dtype)


def forward(net: Network, x):
    """Run the network; returns ``(logits, cache)``."""
    x = np.asarray(x, dtype=net.dtype)
    if x.shape[1:] != net.shapes[0]:
        raise ShapeError(f"input shape {x.shape[1:]} != expected {net.shapes[0]}", layer=0)
    caches = []
    for i, l in enumerate(net.spec.layers):
        p = net.params[i]
        if l.kind == "conv2d":
            if x.shape[1] != l.in_channels:
                raise ShapeError(f"expected {l.in_channels} channels, got {x.shape[1]}", layer=i)
            w = net.weight(i)
            x, c = F.conv2d_forward(x, w, p.get("bias"), l.stride, l.padding)
        elif l.kind == "linear":
            if x.ndim != 2 or x.shape[1] != l.in_channels:
                raise ShapeError(f"expected (N, {l.in_channels}), got {x.shape}", layer=i)
            w = net.weight(i)
            x, c = F.linear_forward(x, w, p.get("bias"))
        elif l.kind == "batchnorm":
            b = net.buffers[i]
            x, c = F.batchnorm_forward(x, p["gamma"], p["beta"], b["running_mean"], b["running_var"],
                                       net.training, l.eps, l.bn_momentum)
        elif l.kind == "relu":
            x, c = F.relu_forward(x)
        elif l.kind == "maxpool":
            x, c = F.maxpool_forward(x, l.kernel_size, l.stride)
        elif l.kind == "avgpool":
            x, c = F.avgpool_forward(x, l.kernel_size, l.stride)
        elif l.kind == "flatten":
            c = x.shape
            x = x.reshape(x.shape[0], -1)
        elif l.kind == "gather":
            c = x.shape
            x = x[:, list(l.index)]
        caches.append(c)
    return x, ForwardCache(net.version, net.training, caches)


def backward(net: Network, cache: ForwardCache, loss_grad):
    """Gradients for every trainable tensor, as a list of per-layer dicts.

    Quantized layers receive gradients on their latents (straight-through
    through the discretisation).
    """
    if cache is None:
        raise StaleCacheError("no forward cache given")
    if cache.version != net.version or len(cache.layers) != len(net.spec.layers):
        raise StaleCacheError("forward cache predates the latest parameter update")
    grads = [{} for _ in net.spec.layers]
    d = np.asarray(loss_grad, dtype=net.dtype)
    for i in range(len(net.spec.layers) - 1, -1, -1):
        l, c = net.spec.layers[i], cache.layers[i]
        need_dx = i > 0
        if l.kind in WEIGHTED:
            fn = F.conv2d_backward if l.kind == "conv2d" else F.linear_backward
            d, dw, db = fn(d, c, need_dx)
            grads[i].update(net.providers[i].backward(dw, net.params[i]))
            if "bias" in net.params[i]:
                grads[i]["bias"] = db
        elif l.kind == "batchnorm":
            d, dg, dbeta = F.batchnorm_backward(d, c)
            grads[i]["gamma"], grads[i]["beta"] = dg, dbeta
        elif l.kind == "relu":
            d = F.relu_backward(d, c)
        elif l.kind == "maxpool":
            d = F.maxpool_backward(d, c)
        elif l.kind == "avgpool":
            d = F.avgpool_backward(d, c)
        elif l.kind == "flatten":
            d = d.reshape(c)
        elif l.kind == "gather":
            dx = np.zeros(c, dtype=d.dtype)
            np.add.at(dx, (slice(None), list(l.index)), d)
            d = dx
    return grads
