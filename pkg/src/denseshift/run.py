"""Training runs end to end: data, network, metrics and artifacts on disk."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import modelfile
from .config import RunConfig
from .datasets import Dataset, default_data_root, load_cifar10, load_mnist, synthetic_blobs
from .engine.network import Network
from .engine.train import History, accuracy, fit
from .errors import DataError
from .freeze import CosineMonitor, TraceRecorder, write_cosine_csv

log = logging.getLogger(__name__)

MODEL_FILE = "model.dsnm"
HISTORY_FILE = "train_log.csv"
COSINE_FILE = "cosine.csv"
TRACE_FILE = "trace.csv"
SUMMARY_FILE = "summary.json"
CONFIG_FILE = "config.json"
NETWORK_FILE = "network.json"
HISTORY_HEADER = ("epoch", "lr", "loss", "train_acc")

DATA_DIRS = {"mnist": "mnist", "cifar10": "cifar-10-batches-bin"}


def data_dir(dataset, root=None) -> Path:
    if root is not None:
        return Path(root).expanduser()
    return default_data_root() / DATA_DIRS[dataset]


def load_data(dataset, root=None, train_limit=None, test_limit=None, seed=0):
    """``(train, test)`` datasets, truncated to the given sizes."""
    if dataset == "blobs":
        full = synthetic_blobs(classes=3, dim=8, n_per_class=200, seed=seed)
        order = np.random.default_rng(seed).permutation(len(full))
        cut = len(full) * 3 // 4
        train, test = full.subset(order[:cut]), full.subset(order[cut:])
    elif dataset == "mnist":
        train, test = load_mnist(data_dir(dataset, root))
    elif dataset == "cifar10":
        train, test = load_cifar10(data_dir(dataset, root))
    else:
        raise DataError(f"unknown dataset {dataset!r}")
    if train_limit is not None:
        train = train.head(train_limit)
    if test_limit is not None:
        test = test.head(test_limit)
    return train, test


class _EveryK:
    """Forward ``snapshot``/``record`` to ``inner`` every ``k`` calls and on ``last``."""

    def __init__(self, inner, k, last=None):
        self.inner, self.k, self.last = inner, k, last

    def snapshot(self, epoch):
        if epoch % self.k == 0 or epoch == self.last:
            self.inner.snapshot(epoch)

    def record(self, step):
        if step % self.k == 0:
            self.inner.record(step)


@dataclass
class RunResult:
    net: Network
    history: History
    accuracy: float
    cosine: dict
    checksum: str
    out_dir: Path | None
    files: dict = field(default_factory=dict)

    def summary_line(self):
        cos = ",".join(f"{k}:{v:.4f}" for k, v in sorted(self.cosine.items()))
        return f"accuracy={self.accuracy:.4f} cosine={cos or '-'} checksum={self.checksum}"


def write_history_csv(path, history: History):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(HISTORY_HEADER)
        for e in history.epochs:
            w.writerow((e.epoch, repr(e.lr), repr(e.loss), repr(e.train_acc)))


def train_run(cfg: RunConfig, out_dir=None, data=None) -> RunResult:
    """Train per ``cfg``; write artifacts to ``out_dir`` (skipped when ``None``).

    ``data`` may supply ``(train, test)`` datasets directly.
    """
    d = cfg.data
    train, test = data if data is not None else load_data(
        d.dataset, d.root, d.train_limit, d.test_limit, cfg.train.seed)
    if len(train) == 0 and cfg.train.epochs > 0:
        raise DataError("empty training set")
    if len(test) == 0:
        raise DataError("empty test set")
    spec = cfg.network_spec(train.images.shape[1:], train.num_classes)
    net = Network(spec, seed=cfg.train.seed, init=cfg.init.strategy, sigma=cfg.init.sigma)
    m = cfg.metrics
    monitor = CosineMonitor(net, source=m.cosine_source) if m.cosine_every else None
    tracer = TraceRecorder.for_network(net, m.trace_elements, cfg.train.seed) if m.trace_elements else None
    hist = fit(net, train.images, train.labels, cfg.train,
               monitor=_EveryK(monitor, m.cosine_every, cfg.train.epochs) if monitor else None,
               tracer=_EveryK(tracer, m.trace_every) if tracer else None)
    acc = accuracy(net, test.images, test.labels)
    cosine = monitor.latest() if monitor else {}
    meta = {
        "dataset": d.dataset,
        "mean": None if train.mean is None else np.asarray(train.mean).tolist(),
        "std": None if train.std is None else np.asarray(train.std).tolist(),
        "test_accuracy": acc,
        "seed": cfg.train.seed,
    }
    data_bytes = modelfile.dumps(net, meta)
    checksum = data_bytes[-modelfile.DIGEST_SIZE:].hex()
    files = {}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {k: out / v for k, v in (("model", MODEL_FILE), ("history", HISTORY_FILE),
                                         ("cosine", COSINE_FILE), ("trace", TRACE_FILE),
                                         ("summary", SUMMARY_FILE), ("config", CONFIG_FILE),
                                         ("network", NETWORK_FILE))}
        files["model"].write_bytes(data_bytes)
        files["config"].write_text(cfg.to_json() + "\n")
        files["network"].write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
        write_history_csv(files["history"], hist)
        write_cosine_csv(files["cosine"], monitor.rows if monitor else [])
        if tracer is not None:
            tracer.write(files["trace"])
        else:
            TraceRecorder(net).write(files["trace"])
        summary = {"accuracy": acc, "cosine": {str(k): v for k, v in cosine.items()},
                   "checksum": checksum, "epochs": cfg.train.epochs,
                   "final_loss": hist.epochs[-1].loss if hist.epochs else None}
        files["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return RunResult(net, hist, acc, cosine, checksum, Path(out_dir) if out_dir else None, files)


def confusion_matrix(pred, labels, num_classes):
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, pred), 1)
    return cm


def write_confusion_csv(path, cm):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["true\\pred"] + [str(k) for k in range(cm.shape[1])])
        for k, row in enumerate(cm):
            w.writerow([str(k)] + [str(int(v)) for v in row])


def evaluate(net: Network, data: Dataset, kernel="float", batch_size=1000):
    """``(accuracy, predictions, confusion)`` via the float engine or the packed kernels."""
    if len(data) == 0:
        raise DataError("empty dataset")
    if kernel == "packed":
        from .kernel.runner import PackedRunner
        logits = PackedRunner(net).predict(data.images, batch_size)
    elif kernel == "float":
        logits = net.predict(data.images, batch_size)
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    pred = logits.argmax(axis=1)
    cm = confusion_matrix(pred, data.labels, max(data.num_classes, logits.shape[1]))
    return float((pred == data.labels).mean()), pred, cm
