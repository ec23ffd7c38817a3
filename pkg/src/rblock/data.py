"""Datasets: the CIFAR-10 binary batch format and a deterministic synthetic
set of low-frequency class blobs for fast runs and CI."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import RngStream

RECORD_BYTES = 3073  # 1 label byte + 3 * 1024 pixel bytes
TRAIN_BATCHES = [f"data_batch_{i}.bin" for i in range(1, 6)]
TEST_BATCH = "test_batch.bin"


class CifarFormatError(ValueError):
    """Raised when a CIFAR binary file does not match the record layout."""


@dataclass
class Dataset:
    x: np.ndarray  # (N, C, H, W) float64
    y: np.ndarray  # (N,) int64
    num_classes: int

    def __len__(self):
        return self.x.shape[0]


def parse_cifar_batch(raw: bytes, source: str = "<bytes>"):
    """Decode one binary batch into (images (N,3,32,32) in [0,1], labels)."""
    if len(raw) % RECORD_BYTES != 0:
        offset = len(raw) - len(raw) % RECORD_BYTES
        raise CifarFormatError(
            f"{source}: length {len(raw)} is not a multiple of {RECORD_BYTES}; "
            f"trailing partial record starts at byte offset {offset}"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise CifarFormatError(f"{source}: record {bad} has label {labels[bad]} > 9")
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return images, labels


def load_cifar10(path, standardize: bool = False):
    """Load the standard binary batches from a directory; returns
    (train Dataset, test Dataset)."""
    root = Path(path)
    if not root.is_dir():
        candidate = root / "cifar-10-batches-bin"
        if candidate.is_dir():
            root = candidate
        else:
            raise CifarFormatError(f"{path} is not a directory")
    elif (root / "cifar-10-batches-bin").is_dir():
        root = root / "cifar-10-batches-bin"

    def read(name):
        f = root / name
        if not f.is_file():
            raise CifarFormatError(f"missing batch file {f}")
        return parse_cifar_batch(f.read_bytes(), str(f))

    xs, ys = [], []
    for name in TRAIN_BATCHES:
        x, y = read(name)
        xs.append(x)
        ys.append(y)
    train = Dataset(np.concatenate(xs), np.concatenate(ys), 10)
    tx, ty = read(TEST_BATCH)
    test = Dataset(tx, ty, 10)

    if standardize:
        mean = train.x.mean(axis=(0, 2, 3), keepdims=True)
        std = train.x.std(axis=(0, 2, 3), keepdims=True)
        std[std == 0] = 1.0
        train = Dataset((train.x - mean) / std, train.y, 10)
        test = Dataset((test.x - mean) / std, test.y, 10)
    return train, test


def make_synthetic(
    classes: int = 3,
    per_class: int = 200,
    shape=(1, 16, 16),
    seed: int = 0,
    noise: float = 0.1,
    partition: str = "train",
) -> Dataset:
    """Low-frequency Gaussian class blobs.

    Class templates depend only on (classes, shape, seed), so train and val
    partitions of the same seed share templates but draw independent noise.
    """
    if classes < 1 or per_class < 1:
        raise ValueError("classes and per_class must be >= 1")
    if partition not in ("train", "val"):
        raise ValueError(f"partition must be 'train' or 'val', got {partition}")
    c, h, w = shape
    root = RngStream(seed)
    template_rng = root.substream(0)
    noise_rng = root.substream(1 if partition == "train" else 2)

    # Coarse 4x4 fields upsampled to (h, w) give smooth, well-separated blobs.
    templates = []
    for _ in range(classes):
        coarse = template_rng.normal(0.0, 1.0, (c, 4, 4))
        templates.append(np.kron(coarse, np.ones((1, h // 4 + 1, w // 4 + 1)))[:, :h, :w])

    xs = np.empty((classes * per_class, c, h, w))
    ys = np.empty(classes * per_class, dtype=np.int64)
    for cls, tpl in enumerate(templates):
        block = tpl[None] + noise * noise_rng.normal(0.0, 1.0, (per_class, c, h, w))
        xs[cls * per_class : (cls + 1) * per_class] = block
        ys[cls * per_class : (cls + 1) * per_class] = cls
    return Dataset(xs, ys, classes)
