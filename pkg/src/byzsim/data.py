"""Datasets, IID sharding, minibatch sampling and IDX (MNIST) ingestion."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, p) float64
    labels: np.ndarray    # (n,) int64; ignored by the quadratic model

    def __len__(self):
        return self.features.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx])


@dataclass(frozen=True)
class DataShard:
    owner: int
    data: Dataset

    def __len__(self):
        return len(self.data)


def sample_batch(shard: DataShard, batch_size: int, rng: np.random.Generator) -> Dataset:
    """Draw ``batch_size`` samples with replacement using the node's own stream."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    if len(shard) == 0:
        raise ConfigError(f"shard of node {shard.owner} is empty")
    return shard.data.subset(rng.integers(0, len(shard), size=batch_size))


def partition_iid(dataset: Dataset, n: int, rng: np.random.Generator) -> list[DataShard]:
    """Shuffle, then split into ``n`` disjoint shards whose sizes differ by at most one."""
    if n < 1:
        raise ConfigError("partition needs at least one node")
    if len(dataset) < n:
        raise ConfigError(f"cannot split {len(dataset)} samples over {n} nodes")
    order = rng.permutation(len(dataset))
    return [DataShard(i, dataset.subset(part)) for i, part in enumerate(np.array_split(order, n))]


def make_blobs(n_samples: int, n_features: int, separation: float,
               rng: np.random.Generator) -> Dataset:
    """Two balanced Gaussian classes (unit variance) whose means are ``separation`` apart."""
    if n_samples < 2 or n_features < 1:
        raise ConfigError("blobs need n_samples >= 2 and n_features >= 1")
    direction = rng.normal(size=n_features)
    direction /= np.linalg.norm(direction)
    labels = np.arange(n_samples) % 2
    centers = np.where(labels[:, None] == 1, 0.5, -0.5) * separation * direction
    features = centers + rng.normal(size=(n_samples, n_features))
    perm = rng.permutation(n_samples)
    return Dataset(features[perm], labels[perm].astype(np.int64))


def make_points(n_samples: int, dim: int, rng: np.random.Generator,
                center: float = 1.0) -> Dataset:
    """Targets for the quadratic model: N(center, I) points, label-free."""
    features = center + rng.normal(size=(n_samples, dim))
    return Dataset(features, np.zeros(n_samples, dtype=np.int64))


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, magic: int, limit: int | None):
    with _open(path) as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise DataFormatError(f"{path}: truncated header")
        found, count = struct.unpack(">II", header)
        if found != magic:
            raise DataFormatError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
        dims = []
        if magic == IMAGES_MAGIC:
            extra = fh.read(8)
            if len(extra) < 8:
                raise DataFormatError(f"{path}: truncated header")
            dims = list(struct.unpack(">II", extra))
        n = count if limit is None else min(count, limit)
        item = int(np.prod(dims)) if dims else 1
        payload = fh.read(n * item)
        if len(payload) < n * item:
            raise DataFormatError(f"{path}: truncated payload ({len(payload)} of {n * item} bytes)")
    values = np.frombuffer(payload, dtype=np.uint8)
    return count, (values.reshape(n, item) if dims else values)


def load_idx(images_path, labels_path, limit: int | None = None) -> Dataset:
    """Parse an IDX image/label pair; pixels are scaled by 1/255.

    ``limit`` keeps only the first ``limit`` samples.
    """
    if limit is not None and limit < 1:
        raise ConfigError("mnist_limit must be >= 1")
    n_images, pixels = _read_idx(images_path, IMAGES_MAGIC, limit)
    n_labels, labels = _read_idx(labels_path, LABELS_MAGIC, limit)
    if n_images != n_labels:
        raise DataFormatError(f"{n_images} images but {n_labels} labels")
    return Dataset(pixels.astype(np.float64) / 255.0, labels.astype(np.int64))


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images (n, rows, cols) and labels (n,) as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())
