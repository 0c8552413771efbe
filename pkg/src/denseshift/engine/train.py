"""Mini-batch training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError, NumericError
from . import functional as F
from .network import Network, backward, forward
from .optim import SGD, cosine_lr_at

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 200
    base_lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 64
    seed: int = 0
    schedule: str = "cosine"
    decay_latents: bool = True
    decay_norm_bias: bool = True  # False: no weight decay on batchnorm gamma/beta or layer biases

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not self.base_lr > 0:
            raise ConfigError("base_lr must be > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")

    def lr_at(self, epoch):
        if self.schedule == "constant":
            return self.base_lr
        return cosine_lr_at(self.base_lr, epoch, self.epochs)

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochStats:
    epoch: int
    lr: float
    loss: float
    train_acc: float


@dataclass
class History:
    epochs: list = field(default_factory=list)

    @property
    def losses(self):
        return [e.loss for e in self.epochs]


def accuracy(net: Network, images, labels, batch_size=1000) -> float:
    if len(labels) == 0:
        raise ValueError("empty dataset")
    pred = net.predict(images, batch_size).argmax(axis=1)
    return float((pred == labels).mean())


def fit(net: Network, images, labels, cfg: TrainConfig, monitor=None, tracer=None,
        on_epoch=None) -> History:
    """Train ``net`` in place.

    ``monitor`` (a :class:`~denseshift.freeze.CosineMonitor`) is snapshotted
    at each epoch end; ``tracer`` records after every optimiser step.
    """
    opt = SGD(net, cfg.momentum, cfg.weight_decay, cfg.decay_latents, cfg.decay_norm_bias)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    hist = History()
    n = len(labels)
    step = 0
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        net.train()
        order = rng.permutation(n)
        tot_loss, correct = 0.0, 0
        for k in range(0, n, cfg.batch_size):
            idx = order[k:k + cfg.batch_size]
            logits, cache = forward(net, images[idx])
            loss, dlogits = F.softmax_cross_entropy(logits, labels[idx])
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, step {step}")
            grads = backward(net, cache, dlogits)
            opt.step(grads, lr)
            step += 1
            if tracer is not None:
                tracer.record(step)
            tot_loss += loss * len(idx)
            correct += int((logits.argmax(axis=1) == labels[idx]).sum())
        stats = EpochStats(epoch + 1, lr, tot_loss / max(n, 1), correct / max(n, 1))
        hist.epochs.append(stats)
        if monitor is not None:
            monitor.snapshot(epoch + 1)
        log.info("epoch %d lr %.3g loss %.4f acc %.4f", stats.epoch, lr, stats.loss, stats.train_acc)
        if on_epoch is not None:
            on_epoch(stats)
    net.eval()
    return hist
