"""Hot inner loops: nearest-codeword search and symbol corruption.

Each kernel has a numba version and a pure-numpy version that produce
bit-identical results. The numba path is used when numba imports and
``MRTOC_DISABLE_NUMBA`` is unset (or ``0``); pass ``backend=`` to force one.
"""

import os

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is optional
    njit = None

HAVE_NUMBA = njit is not None

# rows per chunk in the numpy fallback; bounds the [rows, K] distance buffer
_CHUNK_ELEMS = 1 << 22


def _env_disabled():
    return os.environ.get("MRTOC_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


def default_backend():
    return "numba" if HAVE_NUMBA and not _env_disabled() else "numpy"


def _resolve(backend):
    backend = backend or default_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend


# --- nearest codeword -------------------------------------------------------

def _nearest_numpy(z, cb):
    n, d = z.shape
    out = np.empty(n, dtype=np.int64)
    k = cb.shape[0]
    step = max(1, _CHUNK_ELEMS // max(k, 1))
    for lo in range(0, n, step):
        zc = z[lo:lo + step]
        # accumulate dims in order so the float sums match the compiled loop
        diff = zc[:, None, 0] - cb[None, :, 0]
        dist = diff * diff
        for t in range(1, d):
            diff = zc[:, None, t] - cb[None, :, t]
            dist = dist + diff * diff
        out[lo:lo + step] = np.argmin(dist, axis=1)
    return out


if HAVE_NUMBA:
    @njit(cache=True, nogil=True)
    def _nearest_numba(z, cb):
        n, d = z.shape
        k = cb.shape[0]
        out = np.empty(n, dtype=np.int64)
        for i in range(n):
            best = np.inf
            best_j = 0
            for j in range(k):
                s = z[i, 0] - cb[j, 0]
                s = s * s
                for t in range(1, d):
                    diff = z[i, t] - cb[j, t]
                    s += diff * diff
                # strict < keeps the lowest index on ties
                if s < best:
                    best = s
                    best_j = j
            out[i] = best_j
        return out


def nearest_codeword(z, codewords, backend=None):
    """Index of the nearest row of ``codewords`` for every row of ``z``.

    Squared Euclidean distance; ties go to the lowest index.
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    cb = np.ascontiguousarray(codewords, dtype=np.float64)
    if z.ndim != 2 or cb.ndim != 2 or z.shape[1] != cb.shape[1]:
        raise ValueError(f"shape mismatch: z {z.shape} vs codewords {cb.shape}")
    if cb.shape[0] == 0:
        raise ValueError("empty codebook")
    if z.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    if _resolve(backend) == "numba":
        return _nearest_numba(z, cb)
    return _nearest_numpy(z, cb)


# --- symmetric channel corruption ------------------------------------------

def _corrupt_numpy(symbols, r, eps, u_err, u_sym):
    offset = 1 + np.minimum((u_sym * (r - 1)).astype(np.int64), r - 2)
    hit = u_err < eps
    return np.where(hit, (symbols + offset) % r, symbols)


if HAVE_NUMBA:
    @njit(cache=True, nogil=True)
    def _corrupt_numba(symbols, r, eps, u_err, u_sym):
        out = np.empty_like(symbols)
        for i in range(symbols.shape[0]):
            s = symbols[i]
            if u_err[i] < eps:
                off = np.int64(u_sym[i] * (r - 1))
                if off > r - 2:
                    off = r - 2
                s = (s + 1 + off) % r
            out[i] = s
        return out


def corrupt_symbols(symbols, r, eps, u_err, u_sym, backend=None):
    """Apply symmetric symbol errors driven by pre-drawn uniforms.

    Symbol ``i`` is hit when ``u_err[i] < eps``; a hit symbol moves to one of
    the other ``r - 1`` symbols, chosen uniformly by ``u_sym[i]``. Drawing the
    uniforms outside the kernel lets callers reuse one noise realization for
    several alphabets or error rates.
    """
    symbols = np.ascontiguousarray(symbols, dtype=np.int64).ravel()
    u_err = np.ascontiguousarray(u_err, dtype=np.float64).ravel()
    u_sym = np.ascontiguousarray(u_sym, dtype=np.float64).ravel()
    if not (symbols.shape == u_err.shape == u_sym.shape):
        raise ValueError("symbols and uniforms must have the same length")
    if _resolve(backend) == "numba":
        return _corrupt_numba(symbols, np.int64(r), float(eps), u_err, u_sym)
    return _corrupt_numpy(symbols, int(r), float(eps), u_err, u_sym)
