"""Datasets: seeded Gaussian blobs, IDX ingestion, splitting and batching."""

import csv
import struct
from dataclasses import dataclass

import numpy as np

from . import rng as rng_mod
from .errors import ContractViolation, IngestionError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray   # [n, N] float64
    labels: np.ndarray     # [n] int64
    num_classes: int

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ContractViolation(
                f"features {self.features.shape} and labels {self.labels.shape} disagree")
        if self.features.shape[0] == 0:
            raise ContractViolation("dataset is empty")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ContractViolation(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.features.shape[0]

    @property
    def feature_dim(self):
        return self.features.shape[1]

    def subset(self, idx):
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)


def generate_blobs(num_classes, dim, samples_per_class, spread, seed):
    """Isotropic Gaussian clusters around centers drawn uniformly in ``[-1, 1]^dim``.

    Samples are ordered class by class; shuffle or split before training.
    """
    if num_classes < 2:
        raise ContractViolation(f"need at least 2 classes, got {num_classes}")
    if spread <= 0:
        raise ContractViolation(f"spread must be > 0, got {spread}")
    gen = rng_mod.stream(seed, "blobs")
    centers = gen.uniform(-1.0, 1.0, size=(num_classes, dim))
    noise = gen.standard_normal((num_classes, samples_per_class, dim)) * spread
    feats = (centers[:, None, :] + noise).reshape(-1, dim)
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), samples_per_class)
    return Dataset(feats, labels, num_classes)


def train_test_split(ds, test_fraction, seed):
    """Seeded disjoint split; returns ``(train, test)``."""
    if not 0.0 < test_fraction < 1.0:
        raise ContractViolation(f"test_fraction must be in (0, 1), got {test_fraction}")
    perm = rng_mod.stream(seed, "split").permutation(len(ds))
    n_test = int(round(len(ds) * test_fraction))
    if n_test == 0 or n_test == len(ds):
        raise ContractViolation(f"split of {len(ds)} samples at {test_fraction} leaves a side empty")
    return ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test]))


def batches(ds, num_batches, seed, epoch):
    """Shuffle (keyed by ``seed`` and ``epoch``) and cut into ``num_batches`` near-equal batches."""
    if num_batches < 1 or num_batches > len(ds):
        raise ContractViolation(f"cannot split {len(ds)} samples into {num_batches} batches")
    perm = rng_mod.stream(seed, "shuffle", epoch).permutation(len(ds))
    return [ds.subset(part) for part in np.array_split(perm, num_batches)]


def num_batches_for(n_samples, batch_size):
    return max(1, -(-n_samples // batch_size))


# --- IDX ----------------------------------------------------------------------

def _read_idx(path, expected_magic, expected_ndim):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise IngestionError(path, 0, "file shorter than the 4-byte magic number")
    (magic,) = struct.unpack(">I", blob[:4])
    if magic != expected_magic:
        raise IngestionError(path, 0, f"bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    header_end = 4 + 4 * expected_ndim
    if len(blob) < header_end:
        raise IngestionError(path, 4, "truncated dimension header")
    dims = struct.unpack(f">{expected_ndim}I", blob[4:header_end])
    count = int(np.prod(dims))
    if len(blob) - header_end < count:
        raise IngestionError(path, len(blob),
                             f"truncated payload: need {count} bytes after header, have {len(blob) - header_end}")
    data = np.frombuffer(blob, dtype=np.uint8, count=count, offset=header_end)
    return data.reshape(dims)


def load_idx(images_path, labels_path):
    """Read an IDX image/label pair (ubyte). Pixels are scaled to ``[0, 1]`` and flattened."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise IngestionError(labels_path, 4,
                             f"{labels.shape[0]} labels for {images.shape[0]} images in {images_path}")
    feats = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    lab = labels.astype(np.int64)
    return Dataset(feats, lab, int(lab.max()) + 1 if lab.size else 0)


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 ``images [n, rows, cols]`` and ``labels [n]`` as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I3I", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def write_csv(ds, path_or_file, preamble=None):
    """``label,f_0,...,f_{N-1}``; an optional ``# ...`` preamble line goes first."""

    def _write(fh):
        if preamble:
            fh.write(f"# {preamble}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"f_{i}" for i in range(ds.feature_dim)])
        for x, y in zip(ds.features, ds.labels):
            w.writerow([int(y)] + [repr(float(v)) for v in x])

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", newline="", encoding="utf-8") as fh:
            _write(fh)
