"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Workloads mirror the large preset (M=500 sub-vectors, K up to 256) and
a full training epoch's worth of channel uses. Both backends are checked for
bit-identical output before timing.
"""

import argparse
import time

import numpy as np

from mrtoc import _kernels


def _best(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        print("numba not installed; only the numpy backend is available")
    backends = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])

    rng = np.random.default_rng(0)
    cases = []
    for batch, m, dim, k in ((64, 16, 2, 16), (64, 500, 2, 256), (1000, 500, 2, 256), (64, 8, 4, 256)):
        z = rng.standard_normal((batch * m, dim))
        cb = rng.standard_normal((k, dim))
        cases.append((f"nearest_codeword B={batch} M={m} D={dim} K={k}",
                      lambda be, z=z, cb=cb: _kernels.nearest_codeword(z, cb, backend=be)))
    for n, r in ((64 * 500, 256), (10 ** 6, 256)):
        s = rng.integers(0, r, n)
        u1, u2 = rng.random(n), rng.random(n)
        cases.append((f"corrupt_symbols n={n} r={r}",
                      lambda be, s=s, r=r, u1=u1, u2=u2: _kernels.corrupt_symbols(s, r, 0.05, u1, u2, backend=be)))

    print(f"{'kernel':46s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, fn in cases:
        outs = [fn(be) for be in backends]   # also triggers JIT compilation
        assert all(np.array_equal(outs[0], o) for o in outs[1:]), f"{name}: backends disagree"
        times = [_best(lambda be=be: fn(be), args.repeat) for be in backends]
        line = f"{name:46s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) > 1:
            line += f"{times[0] / times[1]:11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
