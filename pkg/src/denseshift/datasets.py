"""Dataset loading: MNIST IDX files, CIFAR-10 binary batches, synthetic blobs.

Images are returned as float32 ``(N, C, H, W)`` arrays standardised per
channel with statistics taken from the training split; the statistics travel
with the dataset so the same transform can be applied at inference time.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073
CIFAR_TRAIN_FILES = tuple(f"data_batch_{k}.bin" for k in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError("label outside [0, num_classes)")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return replace(self, images=self.images[idx], labels=self.labels[idx])

    def head(self, n) -> "Dataset":
        return self.subset(slice(0, n))


def channel_stats(raw):
    """Per-channel mean and std of ``(N, C, H, W)`` data."""
    axes = (0,) + tuple(range(2, raw.ndim))
    mean = raw.mean(axis=axes, dtype=np.float64)
    std = raw.std(axis=axes, dtype=np.float64)
    return mean, np.where(std > 0, std, 1.0)


def standardize(raw, mean, std):
    shape = (1, -1) + (1,) * (raw.ndim - 2)
    return ((raw - mean.reshape(shape)) / std.reshape(shape)).astype(np.float32)


def _read(path):
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from None


def read_idx_images(path):
    buf = _read(path)
    if len(buf) < 16:
        raise DataError(f"{path}: truncated IDX header")
    magic, n, rows, cols = struct.unpack(">IIII", buf[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataError(f"{path}: bad IDX image magic 0x{magic:08x}")
    need = 16 + n * rows * cols
    if len(buf) < need:
        raise DataError(f"{path}: truncated, expected {need} bytes, got {len(buf)}")
    return np.frombuffer(buf, np.uint8, n * rows * cols, 16).reshape(n, 1, rows, cols)


def read_idx_labels(path):
    buf = _read(path)
    if len(buf) < 8:
        raise DataError(f"{path}: truncated IDX header")
    magic, n = struct.unpack(">II", buf[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DataError(f"{path}: bad IDX label magic 0x{magic:08x}")
    if len(buf) < 8 + n:
        raise DataError(f"{path}: truncated, expected {8 + n} bytes, got {len(buf)}")
    return np.frombuffer(buf, np.uint8, n, 8).astype(np.int64)


def load_idx(images_path, labels_path, mean=None, std=None, num_classes=10) -> Dataset:
    """One IDX image/label pair.  Without ``mean``/``std`` the file's own stats are used."""
    raw = read_idx_images(images_path).astype(np.float32)
    labels = read_idx_labels(labels_path)
    if len(raw) != len(labels):
        raise DataError(f"{len(raw)} images vs {len(labels)} labels")
    if mean is None:
        mean, std = channel_stats(raw)
    return Dataset(standardize(raw, mean, std), labels, num_classes, mean, std)


def load_mnist(root):
    """``(train, test)`` from a directory holding the four standard IDX files."""
    root = Path(root)
    train = load_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte")
    test = load_idx(root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte",
                    train.mean, train.std)
    return train, test


def read_cifar_batch(path):
    buf = _read(path)
    if len(buf) % CIFAR_RECORD:
        raise DataError(f"{path}: size {len(buf)} is not a multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(buf, np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max(initial=0) > 9:
        raise DataError(f"{path}: label byte > 9")
    return rec[:, 1:].reshape(-1, 3, 32, 32), labels


def load_cifar10(root, train_files=CIFAR_TRAIN_FILES, test_file=CIFAR_TEST_FILE,
                 records_per_file=10000):
    """``(train, test)`` from the binary CIFAR-10 distribution directory."""
    root = Path(root)
    xs, ys = [], []
    for name in train_files:
        x, y = read_cifar_batch(root / name)
        if records_per_file and len(y) != records_per_file:
            raise DataError(f"{name}: {len(y)} records, expected {records_per_file}")
        xs.append(x)
        ys.append(y)
    raw = np.concatenate(xs).astype(np.float32)
    mean, std = channel_stats(raw)
    train = Dataset(standardize(raw, mean, std), np.concatenate(ys), 10, mean, std)
    tx, ty = read_cifar_batch(root / test_file)
    test = Dataset(standardize(tx.astype(np.float32), mean, std), ty, 10, mean, std)
    return train, test


def synthetic_blobs(classes=3, dim=8, n_per_class=100, seed=0, separation=6.0, sigma=1.0):
    """Isotropic Gaussian clusters whose centres are at least ``separation*sigma`` apart.

    Returns a :class:`Dataset` with ``(N, dim)`` features, classes in blocks.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(classes, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    d = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
    min_d = d[~np.eye(classes, dtype=bool)].min()
    if min_d < 1e-6:
        raise ValueError("degenerate centres; increase dim")
    centers *= separation * sigma / min_d
    x = np.concatenate([c + sigma * rng.normal(size=(n_per_class, dim)) for c in centers])
    y = np.repeat(np.arange(classes), n_per_class)
    return Dataset(x.astype(np.float32), y, classes)


def transfer_split(dataset: Dataset, pretrain_classes, finetune_classes):
    """Two datasets over disjoint class sets, each relabelled to ``0..k-1``."""
    pre, fine = list(pretrain_classes), list(finetune_classes)
    if not pre or not fine:
        raise ValueError("both class sets must be non-empty")
    if set(pre) & set(fine):
        raise ValueError(f"class sets overlap: {sorted(set(pre) & set(fine))}")

    def part(classes):
        lut = np.full(dataset.num_classes, -1)
        lut[classes] = np.arange(len(classes))
        keep = np.isin(dataset.labels, classes)
        return Dataset(dataset.images[keep], lut[dataset.labels[keep]], len(classes),
                       dataset.mean, dataset.std)

    return part(pre), part(fine)


def default_data_root():
    return Path(os.environ.get("DENSESHIFT_DATA", "~/data")).expanduser()
