"""Minimal numpy training engine: layers, weight providers, SGD, training loop."""
from .network import ForwardCache, Network, backward, forward, infer_shapes
from .optim import SGD, cosine_lr_at, sgd_momentum_step
from .spec import LayerSpec, NetworkSpec, WeightProviderSpec
from .train import TrainConfig, accuracy, fit

__all__ = [
    "ForwardCache", "Network", "backward", "forward", "infer_shapes",
    "SGD", "cosine_lr_at", "sgd_momentum_step",
    "LayerSpec", "NetworkSpec", "WeightProviderSpec",
    "TrainConfig", "accuracy", "fit",
]
