"""Desk-scale datasets: synthetic generators plus CSV and IDX readers."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.datasets import make_blobs, make_moons

from .exceptions import DataError, FormatError
from .nn import Batch

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    name: str
    inputs: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    provenance: str

    @property
    def n_features(self):
        return self.inputs.shape[1]

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1

    def batch(self, idx) -> Batch:
        return Batch(self.inputs[idx], self.labels[idx])

    def train_batch(self) -> Batch:
        return self.batch(self.train_idx)

    def test_batch(self) -> Batch:
        return self.batch(self.test_idx)

    def subset(self, train_idx, test_idx, name=None):
        return Dataset(name or self.name, self.inputs, self.labels,
                       np.asarray(train_idx), np.asarray(test_idx), self.provenance)


def split_indices(n, seed, train_fraction=0.8):
    perm = np.random.default_rng(seed).permutation(n)
    k = int(round(train_fraction * n))
    return np.sort(perm[:k]), np.sort(perm[k:])


def _finish(name, x, y, seed, provenance):
    train, test = split_indices(len(y), seed)
    return Dataset(name, np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.int64),
                   train, test, provenance)


def gen_blobs(n, classes=2, spread=1.0, seed=0, n_features=2, radius=3.0) -> Dataset:
    """Gaussian blobs around centres spaced evenly on a circle.

    Every centre is a vertex of the convex hull, so ``spread=0`` data is
    linearly separable. Extra feature dimensions have centre coordinate 0;
    with one feature the centres sit on a line.
    """
    if n < 10:
        raise ValueError("n must be at least 10")
    if classes < 2:
        raise ValueError("need at least two classes")
    angles = 2 * np.pi * np.arange(classes) / classes
    centres = np.zeros((classes, max(n_features, 2)))
    centres[:, 0] = radius * np.cos(angles)
    centres[:, 1] = radius * np.sin(angles)
    if n_features == 1:
        centres = radius * np.arange(classes, dtype=np.float64)[:, None]
    else:
        centres = centres[:, :n_features]
    counts = [n // classes + (i < n % classes) for i in range(classes)]
    x, y = make_blobs(n_samples=counts, centers=centres, cluster_std=spread,
                      random_state=seed, shuffle=True)
    return _finish("blobs", x, y, seed, "blobs")


def gen_moons(n, noise=0.1, seed=0) -> Dataset:
    if n < 10:
        raise ValueError("n must be at least 10")
    x, y = make_moons(n_samples=n, noise=noise, random_state=seed, shuffle=True)
    return _finish("moons", x, y, seed, "moons")


def save_csv(ds: Dataset, path, label_column="label"):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(ds.n_features)] + [label_column])
        for row, lab in zip(ds.inputs, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])


def load_csv(path, label_column="label", seed=0) -> Dataset:
    """Numeric feature columns plus an integer label column (name or index)."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if isinstance(label_column, int) or str(label_column).lstrip("-").isdigit():
        li = int(label_column) % len(header)
    elif label_column in header:
        li = header.index(label_column)
    else:
        raise DataError(f"{path}: no column {label_column!r}; have {header}")
    x, y = [], []
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            lab = float(row[li])
            feats = [float(v) for k, v in enumerate(row) if k != li]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        if lab != int(lab) or lab < 0:
            raise DataError(f"{path}:{lineno}: label {row[li]!r} is not a class index")
        x.append(feats)
        y.append(int(lab))
    if not y:
        raise DataError(f"{path}: no data rows")
    return _finish(path.stem, np.array(x), np.array(y), seed, "csv")


def _read_idx(path, expected_magic):
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise FormatError(0, f"{path}: truncated header")
    (magic,) = struct.unpack_from(">I", data, 0)
    if magic != expected_magic:
        raise FormatError(0, f"{path}: magic {magic:#010x}, expected {expected_magic:#010x}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(data) < header_len:
        raise FormatError(4, f"{path}: truncated dimension header")
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    size = int(np.prod(dims))
    if len(data) - header_len < size:
        raise FormatError(len(data), f"{path}: expected {size} data bytes after offset {header_len}")
    arr = np.frombuffer(data, dtype=np.uint8, count=size, offset=header_len)
    return arr.reshape(dims)


def load_idx(images_path, labels_path, max_n=None, seed=0) -> Dataset:
    """MNIST-style IDX pair; pixels scaled to [0, 1] and flattened."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if max_n is not None:
        images, labels = images[:max_n], labels[:max_n]
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return _finish(Path(images_path).stem, x, labels.astype(np.int64), seed, "idx")


def write_idx(path, array):
    """Write a uint8 array in IDX format (inverse of the reader)."""
    array = np.asarray(array, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", 0x00000800 | array.ndim))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())
