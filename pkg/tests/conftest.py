import numpy as np
import pytest

from mrtoc import models
from mrtoc.codebook import NestedCodebook


def central_diff(f, arrays, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of each array.

    ``f`` reads the arrays by reference; entries are perturbed in place and restored.
    """
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            fp = f()
            a[i] = old - h
            fm = f()
            a[i] = old
            g[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def assert_grad_close(auto, numeric, rtol=1e-4, atol=1e-6):
    auto = np.asarray(auto, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    assert auto.shape == numeric.shape
    diff = np.abs(auto - numeric)
    scale = np.maximum(np.abs(auto), np.abs(numeric))
    small = scale < 1e-2
    bad_small = small & (diff > atol)
    bad_rel = ~small & (diff > rtol * scale)
    assert not bad_small.any(), f"abs err {diff[bad_small].max():.3e} > {atol}"
    assert not bad_rel.any(), f"rel err {(diff / np.where(scale > 0, scale, 1))[bad_rel].max():.3e} > {rtol}"


@pytest.fixture
def tiny_model():
    """N=4, M=2, D=2, K_max=4, 3 classes; all levels initialized."""
    rng = np.random.default_rng(7)
    enc = models.init_mlp(models.EncoderParams, [4, 6, 4], rng)
    head = models.init_mlp(models.InferenceParams, [4, 6, 3], rng)
    cb = NestedCodebook.from_codewords(rng.standard_normal((4, 2)))
    return models.MrTocModel(enc, head, cb)
