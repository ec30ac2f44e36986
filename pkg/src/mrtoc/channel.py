"""Symmetric discrete memoryless channel and rate/BER arithmetic."""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ContractViolation, InfeasibleRateError


@dataclass(frozen=True)
class SdmcChannel:
    """``r``-ary channel: a symbol survives with prob. ``1 - eps``, otherwise it
    becomes one of the other ``r - 1`` symbols uniformly at random."""

    r: int
    eps: float

    def __post_init__(self):
        if int(self.r) != self.r or self.r < 2:
            raise ContractViolation(f"channel needs r >= 2 symbols, got {self.r}")
        if not 0.0 <= self.eps <= 1.0:
            raise ContractViolation(f"eps must lie in [0, 1], got {self.eps}")

    def matrix(self):
        return transition_matrix(self.r, self.eps)


@dataclass(frozen=True)
class RateContext:
    v_bit: float          # affordable rate, bit/s
    tau: float            # latency budget, s
    m_subvectors: int
    k_max: int
    p_e: float = 0.0      # bit error rate of the underlying pipeline

    def __post_init__(self):
        if not (self.v_bit > 0 and self.tau > 0 and self.m_subvectors > 0 and self.k_max > 0):
            raise ContractViolation(
                f"rate context needs positive v_bit, tau, m_subvectors, k_max; got {self}")
        if not 0.0 <= self.p_e <= 1.0:
            raise ContractViolation(f"p_e must lie in [0, 1], got {self.p_e}")


def transition_matrix(r, eps):
    if int(r) != r or r < 2:
        raise ContractViolation(f"transition matrix needs r >= 2, got {r}")
    if not 0.0 <= eps <= 1.0:
        raise ContractViolation(f"eps must lie in [0, 1], got {eps}")
    r = int(r)
    p = np.full((r, r), eps / (r - 1))
    np.fill_diagonal(p, 1.0 - eps)
    return p


def transmit(indices, ch, rng, backend=None):
    """Send integer symbols through ``ch``; returns the received symbols.

    Consumes exactly ``2 * len(indices)`` uniforms from ``rng``.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= ch.r):
        raise ContractViolation(f"symbol out of range for an alphabet of {ch.r}")
    u_err = rng.random(idx.size)
    u_sym = rng.random(idx.size)
    out = _kernels.corrupt_symbols(idx.ravel(), ch.r, ch.eps, u_err, u_sym, backend=backend)
    return out.reshape(idx.shape)


def transmit_with(indices, ch, u_err, u_sym, backend=None):
    """Like :func:`transmit` but with caller-supplied uniforms.

    Reusing the same ``(u_err, u_sym)`` across alphabets or error rates gives
    coupled realizations: with a fixed draw, every symbol hit at ``eps`` is
    also hit at any larger ``eps``.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= ch.r):
        raise ContractViolation(f"symbol out of range for an alphabet of {ch.r}")
    out = _kernels.corrupt_symbols(idx.ravel(), ch.r, ch.eps, u_err, u_sym, backend=backend)
    return out.reshape(idx.shape)


def _require_pow2(k, what):
    k_int = int(k)
    if k_int != k or k_int < 2 or k_int & (k_int - 1):
        raise ContractViolation(f"{what} must be a power of two >= 2, got {k}")
    return k_int


def eps_from_ber(p_e, k_t):
    """Symbol error probability when each of the ``log2 k_t`` bits flips w.p. ``p_e``."""
    k_t = _require_pow2(k_t, "k_t")
    if not 0.0 <= p_e <= 1.0:
        raise ContractViolation(f"p_e must lie in [0, 1], got {p_e}")
    bits = k_t.bit_length() - 1
    return 1.0 - (1.0 - p_e) ** bits


def codebook_size_from_rate(ctx):
    """``V_bit * tau / log2(M)``, evaluated as written.

    Reference helper only: this expression does not agree dimensionally with
    the payload size ``M * log2 K``, so operational level choices go through
    :func:`select_level` instead.
    """
    if ctx.m_subvectors <= 1:
        raise ContractViolation(f"m_subvectors must exceed 1 (log2 M > 0), got {ctx.m_subvectors}")
    return ctx.v_bit * ctx.tau / math.log2(ctx.m_subvectors)


def select_level(ctx):
    """Largest level ``l`` in ``1..log2 k_max`` whose ``M * l`` bits fit in ``tau`` at ``v_bit``."""
    k_max = _require_pow2(ctx.k_max, "k_max")
    max_level = k_max.bit_length() - 1
    best = None
    for level in range(1, max_level + 1):
        if ctx.m_subvectors * level / ctx.v_bit <= ctx.tau:
            best = level
    if best is None:
        raise InfeasibleRateError(min_tau=ctx.m_subvectors / ctx.v_bit, tau=ctx.tau)
    return best
