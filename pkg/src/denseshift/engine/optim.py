"""SGD with momentum and weight decay, and the cosine learning-rate schedule."""
from __future__ import annotations

import math

import numpy as np

from ..errors import NumericError


def sgd_momentum_step(param, grad, velocity, lr, momentum=0.9, weight_decay=0.0):
    """One update, in place: ``v = m*v + g + wd*p``; ``p -= lr*v``.

    Returns ``(param, velocity)`` (the same arrays that were passed in).
    """
    if param.shape != grad.shape or param.shape != velocity.shape:
        raise ValueError(f"shape mismatch: {param.shape}, {grad.shape}, {velocity.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient")
    velocity *= momentum
    velocity += grad
    if weight_decay:
        velocity += weight_decay * param
    param -= lr * velocity
    return param, velocity


def cosine_lr_at(base_lr, epoch, total_epochs):
    if total_epochs <= 0:
        raise ValueError("total_epochs must be positive")
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * epoch / total_epochs))


LATENT_NAMES = frozenset({"w_sign", "w_scale", "latent"})
NORM_BIAS_NAMES = frozenset({"gamma", "beta", "bias"})


class SGD:
    """Momentum SGD over every trainable tensor of a network.

    ``decay_latents=False`` exempts reparameterisation/quantizer latents
    from weight decay; ``decay_norm_bias=False`` exempts batchnorm affine
    parameters and layer biases.
    """

    def __init__(self, net, momentum=0.9, weight_decay=1e-4, decay_latents=True, decay_norm_bias=True):
        if not 0 <= momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        self.net = net
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.decay_latents = decay_latents
        self.decay_norm_bias = decay_norm_bias
        self.velocity = {(i, n): np.zeros_like(a) for i, n, a in net.parameters()}

    def step(self, grads, lr):
        for i, name, p in self.net.parameters():
            g = grads[i].get(name)
            if g is None:
                continue
            wd = self.weight_decay
            if name in LATENT_NAMES and not self.decay_latents:
                wd = 0.0
            if name in NORM_BIAS_NAMES and not self.decay_norm_bias:
                wd = 0.0
            try:
                sgd_momentum_step(p, g.astype(p.dtype, copy=False), self.velocity[i, name], lr,
                                  self.momentum, wd)
            except NumericError:
                raise NumericError(f"non-finite gradient in layer {i} ({name})") from None
        self.net.mark_updated()
