"""Accuracy across coding levels and channel conditions.

Each sweep cell runs the full pipeline: encode, quantize at level ``l``, send
indices through the channel, look them up, classify. Channel draws are keyed by
``(seed, level, trial)`` only, not by the error rate, so the cells of one level
share a noise realization: a symbol corrupted at ``eps`` is also corrupted at
every larger ``eps``. That makes trends in ``eps`` far less noisy than
independent draws would.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch_mod
from . import codebook as cb_mod
from . import models
from . import rng as rng_mod
from .errors import ContractViolation

SWEEP_COLUMNS = ["level", "bits", "eps_test", "p_e", "accuracy", "stderr", "n", "seed"]


@dataclass(frozen=True)
class SweepRow:
    level: int
    bits: int
    eps_test: float
    p_e: float            # NaN when the row was specified by eps directly
    accuracy: float
    stderr: float
    n: int
    seed: int


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def cell(self, level, eps_test=None, p_e=None):
        for r in self.rows:
            if r.level == level and (eps_test is None or r.eps_test == eps_test) \
                    and (p_e is None or r.p_e == p_e):
                return r
        raise KeyError((level, eps_test, p_e))

    def write_csv(self, path_or_file, preamble=None):
        def _fmt(v):
            return "" if isinstance(v, float) and math.isnan(v) else repr(float(v))

        def _write(fh):
            if preamble:
                fh.write(f"# {preamble}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for r in self.rows:
                w.writerow([r.level, r.bits, _fmt(r.eps_test), _fmt(r.p_e), _fmt(r.accuracy),
                            _fmt(r.stderr), r.n, r.seed])

        if hasattr(path_or_file, "write"):
            _write(path_or_file)
        else:
            with open(path_or_file, "w", newline="", encoding="utf-8") as fh:
                _write(fh)


def _check_level(model, level):
    cb = model.codebook
    if not 1 <= level <= cb.trained_levels:
        raise ContractViolation(
            f"level {level} is not trained (checkpoint trained through level {cb.trained_levels})")


def _trial_predictions(model, level, eps_test, z_e, trials, seed, backend=None):
    q = cb_mod.quantize(model.codebook, z_e, level, backend=backend)
    link = ch_mod.SdmcChannel(1 << level, eps_test)
    for t in range(trials):
        rng = rng_mod.stream(seed, "channel-eval", level, t)
        s_hat = ch_mod.transmit(q.indices, link, rng, backend=backend)
        z_d = cb_mod.lookup(model.codebook, s_hat, level)
        yield models.infer(z_d, model.head).argmax(axis=1)


def evaluate_stats(model, level, eps_test, test_set, trials=10, seed=0, backend=None, z_e=None):
    """Return ``(accuracy, stderr, n)``; ``n = trials * len(test_set)``.

    ``stderr`` is the binomial ``sqrt(p (1 - p) / n)``.
    """
    _check_level(model, level)
    if trials < 1:
        raise ContractViolation(f"trials must be >= 1, got {trials}")
    if z_e is None:
        z_e = models.encode(test_set.features, model.encoder)
    correct = 0
    for pred in _trial_predictions(model, level, eps_test, z_e, trials, seed, backend):
        correct += int((pred == test_set.labels).sum())
    n = trials * len(test_set)
    acc = correct / n
    return acc, math.sqrt(acc * (1.0 - acc) / n), n


def evaluate(model, level, eps_test, test_set, trials=10, seed=0, backend=None):
    """Mean accuracy over ``trials`` channel realizations."""
    return evaluate_stats(model, level, eps_test, test_set, trials, seed, backend)[0]


def sweep_levels_eps(model, levels, eps_list, test_set, trials=10, seed=0, backend=None):
    """Cross product ``levels x eps_list`` (level-major order)."""
    for lv in levels:
        _check_level(model, lv)
    z_e = models.encode(test_set.features, model.encoder)
    out = SweepResult()
    for lv in levels:
        for eps in eps_list:
            acc, se, n = evaluate_stats(model, lv, eps, test_set, trials, seed, backend, z_e=z_e)
            out.rows.append(SweepRow(lv, model.m_subvectors * lv, float(eps), math.nan,
                                     acc, se, n, seed))
    return out


def sweep_ber(model, levels, p_e_list, test_set, trials=10, seed=0, backend=None):
    """Like :func:`sweep_levels_eps` but each row's error rate comes from a bit error rate."""
    for lv in levels:
        _check_level(model, lv)
    z_e = models.encode(test_set.features, model.encoder)
    out = SweepResult()
    for lv in levels:
        for p_e in p_e_list:
            eps = ch_mod.eps_from_ber(p_e, 1 << lv)
            acc, se, n = evaluate_stats(model, lv, eps, test_set, trials, seed, backend, z_e=z_e)
            out.rows.append(SweepRow(lv, model.m_subvectors * lv, eps, float(p_e),
                                     acc, se, n, seed))
    return out


def scrambled_accuracy(model, level, test_set, trials=10, seed=0):
    """Accuracy when every received index is replaced by a uniform random one.

    Independent reference for the fully-corrupted channel regime.
    """
    _check_level(model, level)
    k = 1 << level
    m = model.m_subvectors
    correct = 0
    for t in range(trials):
        rng = rng_mod.stream(seed, "scramble", level, t)
        idx = rng.integers(0, k, size=(len(test_set), m))
        z_d = cb_mod.lookup(model.codebook, idx, level)
        correct += int((models.infer(z_d, model.head).argmax(axis=1) == test_set.labels).sum())
    return correct / (trials * len(test_set))
