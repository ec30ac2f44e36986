"""Acceptance gate.

One test per criterion; each prints a single ``PASS``/``FAIL`` line with the
measured numbers (``pytest -s`` or ``-rA`` to see them). Criteria 5, 7, 8 and 9
train the pinned 10-class blob workload and take a few minutes in total.
"""

import filecmp
import math

import numpy as np
import pytest
from scipy import stats

from mrtoc import autodiff as ad
from mrtoc import channel as chm
from mrtoc import cli, config, data, evaluation, training
from mrtoc import codebook as cbm
from mrtoc.codebook import NestedCodebook
from mrtoc.training import StageSnapshot, TrainConfig

from conftest import assert_grad_close, central_diff
from oracles import FrozenMrLoss, cross_entropy_rows, mlp_forward
from test_autodiff import PRIMITIVE_CASES


def report(num, ok, detail):
    print(f"\n{'PASS' if ok else 'FAIL'} criterion {num}: {detail}")
    assert ok, detail


def _grad_ok(auto, numeric):
    try:
        assert_grad_close(auto, numeric)
        return True
    except AssertionError:
        return False


# --- 1. gradient correctness ------------------------------------------------------------------

def test_c1_gradient_correctness(tiny_model):
    failures = []
    for name, (build, shapes) in sorted(PRIMITIVE_CASES.items()):
        rng = np.random.default_rng(0)
        values = [rng.standard_normal(s) for s in shapes]
        if name == "relu":
            values[0][np.abs(values[0]) < 1e-3] = 0.5
        g = ad.Graph()
        nodes = [g.param(v) for v in values]
        grads = ad.evaluate_with_gradients(g, build(*nodes))

        def f():
            g2 = ad.Graph()
            return float(build(*[g2.constant(v) for v in values]).value)

        for n, num in zip(nodes, central_diff(f, values)):
            if not _grad_ok(grads[n.id], num):
                failures.append(name)

    cfg = TrainConfig(k_max=4, m_subvectors=2, dim=2, encoder_hidden=(6,), head_hidden=(6,),
                      eps_train=0.2, gamma=0.25, eta=0.3)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((5, 4))
    batch = data.Dataset(x, rng.integers(0, 3, 5), 3)
    for level in (1, 2):
        prefix = tiny_model.codebook.codewords[: 2 ** (level - 1)] if level > 1 else np.zeros((0, 2))
        snap = StageSnapshot(level, prefix + 0.05 * rng.standard_normal(prefix.shape))
        loss = training.mr_loss(batch, level, tiny_model, snap, cfg, np.random.default_rng(level))
        grads = ad.evaluate_with_gradients(loss.graph, loss.total)
        oracle = FrozenMrLoss(tiny_model, batch, level, loss.sent, loss.received,
                              [cfg.gamma_for(j) for j in range(1, level + 1)], cfg.eta_for(level),
                              snap.prefix)
        params = training._param_arrays(tiny_model)
        for (pname, _), num in zip(params.items(), central_diff(oracle, list(params.values()))):
            if not _grad_ok(grads[loss.param_nodes[pname].id], num):
                failures.append(f"mr_loss l={level} {pname}")
    report(1, not failures,
           f"{len(PRIMITIVE_CASES)} primitives + mr_loss at l=1,2 vs central differences (rel 1e-4)"
           + (f"; mismatches: {failures}" if failures else ""))


# --- 2. straight-through contract ---------------------------------------------------------------

def test_c2_ste_contract():
    bad = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(1, 4))
        m = int(rng.integers(1, 6))
        level = int(rng.integers(1, 5))
        cb = NestedCodebook.from_codewords(rng.standard_normal((16, dim)))
        g = ad.Graph()
        w = g.param(rng.standard_normal((3, m * dim)))
        z = g.constant(rng.standard_normal((4, 3))) @ w
        q = cbm.quantize(cb, z.value, level)
        subs = z.value.reshape(-1, dim)
        d = ((subs[:, None, :] - cb.codewords[None, : 2 ** level]) ** 2).sum(axis=2)
        oracle = cb.codewords[d.argmin(axis=1)].reshape(z.value.shape)
        out = cbm.straight_through(z, q.quantized)
        c = rng.standard_normal(out.shape)
        grads = ad.evaluate_with_gradients(g, ad.sum_(ad.mul(out, c)))
        # identity pass-through: d/dz sum(c * st(z)) = c, so d/dW = x^T c
        x = g.nodes[0].value if g.nodes[0].id != w.id else g.nodes[1].value
        expect_w = x.T @ c
        if out.value.tobytes() != oracle.tobytes() or not np.allclose(grads[w.id], expect_w, rtol=1e-13, atol=0):
            bad.append(seed)
    report(2, not bad, f"forward bit-equals nearest codeword and encoder gets identity gradient on 100 seeds"
           + (f"; failing seeds {bad}" if bad else ""))


# --- 3. channel statistics ------------------------------------------------------------------------

def test_c3_channel_statistics():
    n = 10 ** 5
    lines, ok = [], True
    for r in (2, 16, 256):
        for eps in (0.001, 0.01, 0.05, 0.1):
            rng = np.random.default_rng([r, int(eps * 1e4)])
            idx = rng.integers(0, r, n)
            out = chm.transmit(idx, chm.SdmcChannel(r, eps), rng)
            hit = out != idx
            z = (hit.mean() - eps) / math.sqrt(eps * (1 - eps) / n)
            p = float("nan")
            if r > 2:
                counts = np.bincount((out[hit] - idx[hit]) % r, minlength=r)[1:]
                p = stats.chisquare(counts).pvalue
            cell_ok = abs(z) <= 3 and (r == 2 or p > 0.01)
            ok &= cell_ok
            lines.append(f"r={r} eps={eps}: z={z:+.2f} chi2 p={p:.3f}")
    report(3, ok, "error frequency within 3 sd and uniform destinations; " + "; ".join(lines))


# --- 4. formula fidelity ------------------------------------------------------------------------------

def test_c4_formula_fidelity():
    eps = chm.eps_from_ber(0.01, 256)
    level = chm.select_level(chm.RateContext(v_bit=1000, tau=2.0, m_subvectors=500, k_max=256))
    worst = max(np.max(np.abs(chm.transition_matrix(r, e).sum(axis=1) - 1))
                for r in (2, 3, 16, 256, 1000) for e in (0, 0.001, 0.05, 0.5, 1))
    ok = round(eps, 12) == round(1 - 0.99 ** 8, 12) and level == 4 and worst <= 1e-12
    report(4, ok, f"eps_from_ber={eps:.12f}, select_level={level}, max row-sum error={worst:.1e}")


# --- shared end-to-end workload ---------------------------------------------------------------------

class NestingRecorder:
    def __init__(self):
        self.problems = []
        self.last = None
        self.stages = 0
        self.steps = 0

    def on_stage_start(self, level, model):
        cb = model.codebook
        n = 2 ** (level - 1)
        if self.last is not None and cb.codewords[:n].tobytes() != self.last[:n].tobytes():
            self.problems.append(f"prefix changed by extend_level at level {level}")
        if level > 1 and cb.prefix_snapshot.tobytes() != cb.codewords[:n].tobytes():
            self.problems.append(f"snapshot differs from prefix at level {level}")
        self.tail = cb.codewords[2 ** level:].copy()
        self.stages += 1

    def on_step(self, level, epoch, model, loss):
        cb = model.codebook.codewords
        self.steps += 1
        if cb[2 ** level:].tobytes() != self.tail.tobytes():
            self.problems.append(f"codeword >= 2^{level} modified at level {level}")
        for j, (s, r) in enumerate(zip(loss.sent, loss.received), start=1):
            if s.min() < 0 or s.max() >= 2 ** j or r.min() < 0 or r.max() >= 2 ** j:
                self.problems.append(f"index out of range at level {j}")
        self.last = cb.copy()


def _pinned_config(**model):
    cfg = config.desk_preset()
    if model:
        cfg = config.apply_overrides(cfg, [f"model.{k}={v}" for k, v in model.items()])
    return cfg


@pytest.fixture(scope="module")
def desk_run():
    cfg = _pinned_config()
    d, m, t = cfg.data, cfg.model, cfg.train
    assert (d.num_classes, d.dim, d.spread, d.samples_per_class) == (10, 8, 0.15, 500)
    assert (m.k_max, m.m_subvectors, m.dim, t.eps_train, t.epochs_per_level) == (16, 16, 2, 0.01, 30)
    train, test = cli.experiment_data(cfg)
    rec = NestingRecorder()
    res = training.train_progressive(cfg.train_config(), train, hooks=rec)
    sweep = evaluation.sweep_levels_eps(res.model, [1, 2, 3, 4], [0.001, 0.01, 0.05], test,
                                        trials=cfg.eval.trials, seed=cfg.seed)
    return dict(cfg=cfg, train=train, test=test, result=res, recorder=rec, sweep=sweep)


# --- 5. nesting invariants --------------------------------------------------------------------------

@pytest.mark.slow
def test_c5_nesting_invariants(desk_run):
    rec = desk_run["recorder"]
    ok = not rec.problems and rec.stages == 4 and rec.steps > 0
    report(5, ok, f"{rec.stages} stages, {rec.steps} steps checked; "
           + ("no violations" if not rec.problems else "; ".join(sorted(set(rec.problems)))))


# --- 6. loss identity ------------------------------------------------------------------------------

def test_c6_loss_identity(tiny_model):
    rng = np.random.default_rng(3)
    batch = data.Dataset(rng.standard_normal((6, 4)), rng.integers(0, 3, 6), 3)
    cfg = TrainConfig(k_max=4, m_subvectors=2, dim=2, encoder_hidden=(6,), head_hidden=(6,),
                      eps_train=0.1, gamma=0.25, eta=0.5)
    loss = training.mr_loss(batch, 1, tiny_model, StageSnapshot(1, np.zeros((0, 2))), cfg,
                            np.random.default_rng(4))
    z = mlp_forward(batch.features, tiny_model.encoder.weights, tiny_model.encoder.biases)
    e = tiny_model.codebook.codewords[loss.sent[0]].reshape(z.shape)
    vq = 1.25 * np.sum((z - e) ** 2) / len(batch)
    z_d = tiny_model.codebook.codewords[loss.received[0]].reshape(z.shape)
    ce = cross_entropy_rows(mlp_forward(z_d, tiny_model.head.weights, tiny_model.head.biases),
                            batch.labels).mean()
    errs = [abs(float(loss.task.value) - ce), abs(float(loss.vq.value) - vq),
            abs(float(loss.drift.value)), abs(float(loss.total.value) - ce - vq)]
    report(6, max(errs) <= 1e-12, f"|task-CE|={errs[0]:.1e} |vq-VQ|={errs[1]:.1e} "
           f"drift={errs[2]:.1e} |total-(CE+VQ)|={errs[3]:.1e}")


# --- 7. end-to-end trend ---------------------------------------------------------------------------

@pytest.mark.slow
def test_c7a_more_bits_more_accuracy(desk_run):
    sw = desk_run["sweep"]
    a1, a4 = sw.cell(1, 0.001).accuracy, sw.cell(4, 0.001).accuracy
    report("7a", a4 - a1 >= 0.05,
           f"eps_test=0.001: level1={a1:.4f} level4={a4:.4f} gain={100 * (a4 - a1):.2f} points (need >= 5)")


@pytest.mark.slow
def test_c7b_accuracy_non_increasing_in_eps(desk_run):
    sw = desk_run["sweep"]
    bad, cells = [], []
    for lv in (1, 2, 3, 4):
        rows = [sw.cell(lv, e) for e in (0.001, 0.01, 0.05)]
        cells.append(f"l{lv}=" + "/".join(f"{r.accuracy:.4f}" for r in rows))
        for lo, hi in zip(rows, rows[1:]):
            if hi.accuracy > lo.accuracy + 2 * math.hypot(lo.stderr, hi.stderr):
                bad.append((lv, hi.eps_test))
    report("7b", not bad, "accuracy at eps 0.001/0.01/0.05: " + " ".join(cells)
           + (f"; increases at {bad}" if bad else ""))


@pytest.mark.slow
def test_c7c_close_to_reference(desk_run):
    cfg = desk_run["cfg"]
    ref = training.train_reference(cfg.train_config(), desk_run["train"])
    ref_acc = training.reference_accuracy(ref, desk_run["test"])
    a4 = desk_run["sweep"].cell(4, 0.001).accuracy
    report("7c", abs(a4 - ref_acc) <= 0.05,
           f"level4@0.001={a4:.4f} reference MLP={ref_acc:.4f} gap={100 * abs(a4 - ref_acc):.2f} points (need <= 5)")


# --- 8. codeword dimension -------------------------------------------------------------------------

@pytest.mark.slow
def test_c8_codeword_dimension(desk_run):
    cfg4 = _pinned_config(m_subvectors=8, dim=4)
    res4 = training.train_progressive(cfg4.train_config(), desk_run["train"])
    top = res4.model.codebook.trained_levels
    acc4, se4, _ = evaluation.evaluate_stats(res4.model, top, 0.001, desk_run["test"],
                                            trials=cfg4.eval.trials, seed=cfg4.seed)
    row2 = desk_run["sweep"].cell(top, 0.001)
    report(8, row2.accuracy >= acc4 - max(row2.stderr, se4),
           f"level {top} eps_test=0.001: D=2,M=16 {row2.accuracy:.4f}+/-{row2.stderr:.4f} vs "
           f"D=4,M=8 {acc4:.4f}+/-{se4:.4f}")


# --- 9. determinism --------------------------------------------------------------------------------

@pytest.mark.slow
def test_c9_determinism(tmp_path):
    # identical configs, output_dir included: run twice into one directory, moving run 1 aside
    out = tmp_path / "run"
    names = ["checkpoint.mrtoc", "train_log.csv", "config.json", "sweep_eps.csv", "sweep_ber.csv"]
    for keep in ("first", None):
        assert cli.run(["train", "--preset", "desk", "--out", str(out)]) == 0
        assert cli.run(["sweep", "--checkpoint", str(out / "checkpoint.mrtoc")]) == 0
        if keep:
            (tmp_path / keep).mkdir()
            for n in names:
                (out / n).rename(tmp_path / keep / n)
    same = [n for n in names if filecmp.cmp(tmp_path / "first" / n, out / n, shallow=False)]
    report(9, same == names, f"byte-identical across two train+sweep runs: {same}")
