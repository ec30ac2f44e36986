"""Nested vector-quantization codebook.

One table of ``k_max`` codewords serves every coding level: the level-``l``
codebook is the first ``2**l`` rows. Training grows the table one level at a
time (:func:`extend_level`); quantization at level ``l`` only ever looks at
that prefix.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from . import autodiff as ad
from .errors import ContractViolation


def _log2_exact(k):
    if k < 2 or k & (k - 1):
        return None
    return k.bit_length() - 1


def level_introduced(index):
    """Coding level at which codeword ``index`` first appears (0 and 1 -> level 1)."""
    return max(1, int(index).bit_length())


@dataclass
class NestedCodebook:
    dim: int
    k_max: int
    codewords: np.ndarray
    # levels whose codewords have been initialized (>= trained_levels)
    extended_levels: int = 0
    trained_levels: int = 0
    # frozen copy of the prefix taken when the current level was added
    prefix_snapshot: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if _log2_exact(int(self.k_max)) is None:
            raise ContractViolation(f"k_max must be a power of two >= 2, got {self.k_max}")
        self.codewords = np.asarray(self.codewords, dtype=np.float64)
        if self.codewords.shape != (self.k_max, self.dim):
            raise ContractViolation(
                f"codewords shape {self.codewords.shape} != ({self.k_max}, {self.dim})")
        if not 0 <= self.trained_levels <= self.extended_levels <= self.max_level:
            raise ContractViolation(
                f"need 0 <= trained_levels ({self.trained_levels}) <= extended_levels "
                f"({self.extended_levels}) <= {self.max_level}")

    @property
    def max_level(self):
        return _log2_exact(self.k_max)

    @classmethod
    def empty(cls, dim, k_max):
        """The starting point of progressive training: no levels yet."""
        return cls(dim=dim, k_max=k_max, codewords=np.zeros((k_max, dim)))

    @classmethod
    def from_codewords(cls, codewords):
        """Wrap a fully specified table; every level counts as trained."""
        cw = np.asarray(codewords, dtype=np.float64)
        k, d = cw.shape
        lv = _log2_exact(k)
        if lv is None:
            raise ContractViolation(f"codeword count must be a power of two >= 2, got {k}")
        return cls(dim=d, k_max=k, codewords=cw, extended_levels=lv, trained_levels=lv)

    def level_codewords(self, level):
        self._check_level(level)
        return self.codewords[: 1 << level]

    def _check_level(self, level):
        if not 1 <= level <= self.max_level:
            raise ContractViolation(f"level {level} outside 1..{self.max_level}")
        if level > self.extended_levels:
            raise ContractViolation(
                f"level {level} has not been initialized (extended up to {self.extended_levels})")

    def copy(self):
        snap = None if self.prefix_snapshot is None else self.prefix_snapshot.copy()
        return NestedCodebook(self.dim, self.k_max, self.codewords.copy(),
                              self.extended_levels, self.trained_levels, snap)


@dataclass
class QuantizationResult:
    indices: np.ndarray      # [M] or [B, M] int64, all < 2**level
    quantized: np.ndarray    # same shape as the input features
    level: int


def _split(z, dim):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim not in (1, 2):
        raise ContractViolation(f"features must be [M*D] or [B, M*D], got shape {z.shape}")
    if z.shape[-1] % dim:
        raise ContractViolation(f"feature length {z.shape[-1]} not divisible by codeword dim {dim}")
    return z, z.reshape(-1, dim)


def quantize(cb, z_e, level, backend=None):
    """Map every ``dim``-sized sub-vector of ``z_e`` to its nearest level-``level`` codeword."""
    cb._check_level(level)
    z, flat = _split(z_e, cb.dim)
    active = cb.codewords[: 1 << level]
    idx = _kernels.nearest_codeword(flat, active, backend=backend)
    quantized = active[idx].reshape(z.shape)
    m = z.shape[-1] // cb.dim
    indices = idx.reshape(z.shape[:-1] + (m,))
    return QuantizationResult(indices=indices, quantized=quantized, level=level)


def lookup(cb, indices, level):
    """Concatenate the addressed level-``level`` codewords (receiver-side demapping)."""
    cb._check_level(level)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= 1 << level):
        bad = int(idx.max()) if idx.max() >= 1 << level else int(idx.min())
        raise ContractViolation(
            f"index {bad} not addressable at level {level} (needs < {1 << level}); "
            "channel alphabet and coding level disagree")
    if idx.ndim not in (1, 2):
        raise ContractViolation(f"indices must be [M] or [B, M], got shape {idx.shape}")
    vecs = cb.codewords[idx]
    return vecs.reshape(idx.shape[:-1] + (idx.shape[-1] * cb.dim,))


def extend_level(cb, level, rng, scale=1.0):
    """Return a copy of ``cb`` with level ``level`` initialized.

    The existing ``2**(level-1)`` codewords are kept bit-exactly and also
    frozen into ``prefix_snapshot``; the new ``2**(level-1)`` codewords (two
    for level 1) are drawn i.i.d. Gaussian with mean 0 and per-dimension std
    ``scale`` (a scalar or a length-``dim`` vector).
    """
    if cb.trained_levels != level - 1 or cb.extended_levels != level - 1:
        raise ContractViolation(
            f"extend_level({level}) needs a codebook trained through level {level - 1}, "
            f"got trained={cb.trained_levels}, extended={cb.extended_levels}")
    if level > cb.max_level:
        raise ContractViolation(f"cannot extend to level {level}: k_max={cb.k_max} allows {cb.max_level}")
    out = cb.copy()
    lo = 0 if level == 1 else 1 << (level - 1)
    hi = 1 << level
    std = np.broadcast_to(np.asarray(scale, dtype=np.float64), (cb.dim,))
    out.codewords[lo:hi] = rng.standard_normal((hi - lo, cb.dim)) * std
    out.prefix_snapshot = cb.codewords[:lo].copy()
    out.extended_levels = level
    return out


def vq_loss(z_e, q, gamma, codewords=None):
    """Codebook loss plus ``gamma``-weighted commitment loss.

    ``||sg[z_e] - e||^2 + gamma * ||z_e - sg[e]||^2`` summed over sub-vectors
    (and averaged over the batch when ``z_e`` is ``[B, M*D]``). Pass the
    codebook parameter node as ``codewords`` to route the first term's
    gradient into the table; otherwise the codewords are constants.
    """
    if gamma <= 0:
        raise ContractViolation(f"gamma must be > 0, got {gamma}")
    g = z_e.graph
    if q.quantized.shape != z_e.shape:
        raise ContractViolation(f"vq_loss: shape mismatch {z_e.shape} vs {q.quantized.shape}")
    if codewords is None:
        e = g.constant(q.quantized)
    else:
        dim = codewords.shape[1]
        e = ad.reshape(ad.take_rows(codewords, q.indices.reshape(-1)), z_e.shape)
        if e.shape != z_e.shape:
            raise ContractViolation(f"vq_loss: codeword dim {dim} inconsistent with {z_e.shape}")
    codebook_term = ad.squared_l2(ad.stop_gradient(z_e) - e)
    commit_term = ad.squared_l2(z_e - ad.stop_gradient(e))
    total = codebook_term + ad.scale(commit_term, gamma)
    if z_e.value.ndim == 2:
        total = ad.scale(total, 1.0 / z_e.shape[0])
    return total


def straight_through(z_e, quantized):
    """Forward the quantized vector, backpropagate to ``z_e`` as identity."""
    return ad.straight_through(z_e, quantized)


def dump_csv(cb, path_or_file):
    """Write ``level_introduced,index,dim_0,...`` rows for the initialized codewords."""
    n = 1 << cb.extended_levels if cb.extended_levels else 0
    header = ["level_introduced", "index"] + [f"dim_{i}" for i in range(cb.dim)]

    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(n):
            w.writerow([level_introduced(i), i] + [repr(float(v)) for v in cb.codewords[i]])

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", newline="", encoding="utf-8") as fh:
            _write(fh)
