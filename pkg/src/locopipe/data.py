"""Synthetic classification datasets, an IDX loader, and seeded batching."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, CountMismatch, InvalidArg, TruncatedFile

_IDX_IMAGE_MAGIC = 0x00000803
_IDX_LABEL_MAGIC = 0x00000801

# class means sit on an integer lattice scaled by this spacing, far enough
# apart that modest spreads keep the blobs linearly separable
_LATTICE_SPACING = 4.0

# spiral parameterisation: angle sweeps [base, base + turns * 2*pi)
_SPIRAL_BASE_ANGLE = 0.5
_SPIRAL_TURNS = 1.5


@dataclass(frozen=True)
class Dataset:
    """Feature matrix [N x D] (float64) with integer labels in [0, C)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        f, y = self.features, self.labels
        if f.ndim != 2 or f.shape[0] < 1:
            raise InvalidArg(f"features must be a non-empty [N x D] matrix, got {f.shape}")
        if y.shape != (f.shape[0],):
            raise InvalidArg("labels must be one integer per row of features")
        if not np.isfinite(f).all():
            raise InvalidArg("features contain non-finite values")
        if self.num_classes < 1 or y.min() < 0 or y.max() >= self.num_classes:
            raise InvalidArg(f"labels must lie in [0, {self.num_classes})")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def gen_blobs(n_per_class: int, classes: int, dim: int, spread: float,
              seed: int) -> Dataset:
    """Gaussian clusters, one per class, centred on a fixed integer lattice.

    ``spread`` is the isotropic standard deviation; zero collapses each class
    onto its mean exactly.
    """
    if n_per_class < 1 or classes < 1 or dim < 1:
        raise InvalidArg("n_per_class, classes, and dim must all be >= 1")
    if spread < 0:
        raise InvalidArg(f"spread must be >= 0, got {spread}")
    side = 1
    while side ** dim < classes:
        side += 1
    rng = np.random.default_rng(seed)
    feats = np.empty((classes * n_per_class, dim))
    labels = np.empty(classes * n_per_class, dtype=np.int64)
    for c in range(classes):
        mean = np.array(np.unravel_index(c, (side,) * dim), dtype=np.float64)
        mean *= _LATTICE_SPACING
        block = slice(c * n_per_class, (c + 1) * n_per_class)
        feats[block] = mean + rng.normal(0.0, spread, size=(n_per_class, dim))
        labels[block] = c
    return Dataset(feats, labels, classes)


def spiral_reference(n_per_class: int) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free coordinates of both spiral arms (class 0 rows, class 1 rows).

    Exposed so tests can recompute the exact curve the generator samples.
    """
    i = np.arange(n_per_class, dtype=np.float64)
    theta = _SPIRAL_BASE_ANGLE + 2.0 * np.pi * _SPIRAL_TURNS * (i / n_per_class)
    radius = theta / (_SPIRAL_BASE_ANGLE + 2.0 * np.pi * _SPIRAL_TURNS)
    arm0 = np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])
    return arm0, -arm0  # the second arm is the first rotated by pi


def gen_spirals(n_per_class: int, noise: float, seed: int) -> Dataset:
    """Two interleaved Archimedean spiral arms in the plane, one per class."""
    if n_per_class < 1:
        raise InvalidArg("n_per_class must be >= 1")
    if noise < 0:
        raise InvalidArg(f"noise must be >= 0, got {noise}")
    arm0, arm1 = spiral_reference(n_per_class)
    feats = np.concatenate([arm0, arm1])
    labels = np.concatenate([
        np.zeros(n_per_class, dtype=np.int64),
        np.ones(n_per_class, dtype=np.int64),
    ])
    rng = np.random.default_rng(seed)
    feats = feats + rng.normal(0.0, noise, size=feats.shape)
    return Dataset(feats, labels, 2)


def _read_idx_header(raw: bytes, n_dims: int, expected_magic: int,
                     path: str) -> tuple[int, ...]:
    header_len = 4 * (1 + n_dims)
    if len(raw) < header_len:
        raise TruncatedFile(f"{path}: header needs {header_len} bytes, file has {len(raw)}")
    fields = struct.unpack(f">{1 + n_dims}I", raw[:header_len])
    if fields[0] != expected_magic:
        raise BadMagic(f"{path}: magic {fields[0]:#010x}, expected {expected_magic:#010x}")
    return fields[1:]


def load_idx(images_path, labels_path) -> Dataset:
    """Read a big-endian IDX image/label pair into a flat float dataset.

    Pixels are scaled to [0, 1] by dividing by 255; each image is flattened
    to one feature row.
    """
    img_raw = Path(images_path).read_bytes()
    count, rows, cols = _read_idx_header(img_raw, 3, _IDX_IMAGE_MAGIC, str(images_path))
    payload = img_raw[16:]
    expected = count * rows * cols
    if len(payload) < expected:
        raise TruncatedFile(
            f"{images_path}: payload has {len(payload)} bytes, header declares {expected}")

    lbl_raw = Path(labels_path).read_bytes()
    (lbl_count,) = _read_idx_header(lbl_raw, 1, _IDX_LABEL_MAGIC, str(labels_path))
    lbl_payload = lbl_raw[8:]
    if len(lbl_payload) < lbl_count:
        raise TruncatedFile(
            f"{labels_path}: payload has {len(lbl_payload)} bytes, header declares {lbl_count}")
    if lbl_count != count:
        raise CountMismatch(f"{count} images but {lbl_count} labels")

    feats = np.frombuffer(payload[:expected], dtype=np.uint8).astype(np.float64)
    feats = feats.reshape(count, rows * cols) / 255.0
    labels = np.frombuffer(lbl_payload[:lbl_count], dtype=np.uint8).astype(np.int64)
    return Dataset(feats, labels, int(labels.max()) + 1)


class BatchIterator:
    """Single-pass iterator over a dataset in a fixed (optionally shuffled)
    order; the final batch may be short."""

    def __init__(self, dataset: Dataset, batch_size: int, shuffle: bool, seed: int):
        if batch_size < 1:
            raise InvalidArg(f"batch_size must be >= 1, got {batch_size}")
        self.dataset = dataset
        self.batch_size = batch_size
        if shuffle:
            self.order = np.random.default_rng(seed).permutation(dataset.n)
        else:
            self.order = np.arange(dataset.n)
        self.cursor = 0

    def __len__(self) -> int:
        return -(-self.dataset.n // self.batch_size)  # ceil division

    def __iter__(self) -> "BatchIterator":
        return self

    def __next__(self) -> tuple[np.ndarray, np.ndarray]:
        if self.cursor >= self.dataset.n:
            raise StopIteration
        idx = self.order[self.cursor:self.cursor + self.batch_size]
        self.cursor += self.batch_size
        return self.dataset.features[idx], self.dataset.labels[idx]


def batches(dataset: Dataset, batch_size: int, shuffle: bool = False,
            seed: int = 0) -> BatchIterator:
    """Fresh batch iterator; equal seeds yield equal orders."""
    return BatchIterator(dataset, batch_size, shuffle, seed)
