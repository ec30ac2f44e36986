"""Progressive level-by-level training with the multi-rate loss.

Stage ``l`` (``l = 1 .. log2 k_max``):

1. grow the codebook to ``2**l`` codewords, keeping the old prefix and
   freezing a copy of it;
2. for each epoch, shuffle the training set into ``P`` batches;
3. per batch: encode, quantize at every level ``j <= l``, push the indices
   through the channel at ``eps_train``, run the head on each received
   vector, and take one Adam step on the summed loss.

The loss at stage ``l`` is::

    sum_j CE(y, yhat_j)
  + sum_j ( ||sg[z_e] - e_j||^2 + gamma_j ||z_e - sg[e_j]||^2 )
  + eta_l * sum_{k < 2**(l-1)} ||e_k - e_k^snapshot||^2
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import channel as ch_mod
from . import codebook as cb_mod
from . import data as data_mod
from . import models
from . import rng as rng_mod
from .errors import ContractViolation, DivergenceError

log = logging.getLogger(__name__)

LOG_COLUMNS = ["level", "epoch", "mean_loss", "task_loss", "vq_loss", "drift_loss", "train_acc"]


@dataclass
class TrainConfig:
    k_max: int = 16
    m_subvectors: int = 16
    dim: int = 2
    encoder_hidden: tuple = (128, 128)
    head_hidden: tuple = (128, 128)
    epochs_per_level: int = 30
    batch_size: int = 64
    # overrides batch_size when set: the number of batches P per epoch
    num_batches: int = None
    learning_rate: float = 1e-3
    # scalar, or one value per level (index 0 -> level 1)
    gamma: object = 0.25
    eta: object = 0.1
    eps_train: float = 0.01
    independent_level_noise: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.k_max < 2 or self.k_max & (self.k_max - 1):
            raise ContractViolation(f"k_max must be a power of two >= 2, got {self.k_max}")
        for name in ("m_subvectors", "dim", "batch_size"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be positive")
        if self.epochs_per_level < 0:
            raise ContractViolation("epochs_per_level must be >= 0")
        if self.learning_rate <= 0:
            raise ContractViolation("learning_rate must be > 0")
        if not 0.0 <= self.eps_train <= 1.0:
            raise ContractViolation(f"eps_train must lie in [0, 1], got {self.eps_train}")
        for lv in range(1, self.levels + 1):
            if self.gamma_for(lv) <= 0:
                raise ContractViolation(f"gamma for level {lv} must be > 0")
            if self.eta_for(lv) < 0:
                raise ContractViolation(f"eta for level {lv} must be >= 0")

    @property
    def levels(self):
        return self.k_max.bit_length() - 1

    def _per_level(self, value, level):
        if isinstance(value, (list, tuple)):
            if len(value) < level:
                raise ContractViolation(f"per-level list {value} has no entry for level {level}")
            return float(value[level - 1])
        return float(value)

    def gamma_for(self, level):
        return self._per_level(self.gamma, level)

    def eta_for(self, level):
        # level 1 has no earlier codewords to anchor; the loss reduces to CE + VQ
        return 0.0 if level == 1 else self._per_level(self.eta, level)


@dataclass
class StageSnapshot:
    level: int
    prefix: np.ndarray
    epoch_stats: list = field(default_factory=list)


@dataclass
class MrLoss:
    graph: ad.Graph
    total: ad.Node
    task: ad.Node
    vq: ad.Node
    drift: ad.Node
    logits: list          # per level j = 1..l, arrays [B, C]
    sent: list            # per level, quantized indices [B, M]
    received: list        # per level, indices after the channel
    param_nodes: dict     # name -> node


def _bind(graph, model):
    enc = model.encoder.bind(graph)
    head = model.head.bind(graph)
    cw = graph.param(model.codebook.codewords, name="codebook")
    nodes = {"codebook": cw}
    for prefix, layers in (("encoder", enc), ("head", head)):
        for i, (w, b) in enumerate(layers):
            nodes[f"{prefix}.{i}.weight"] = w
            nodes[f"{prefix}.{i}.bias"] = b
    return enc, head, cw, nodes


def mr_loss(batch, level, model, snapshot, config, noise_rng, backend=None):
    """Multi-rate loss for one batch at stage ``level``.

    ``noise_rng`` drives the channel. Unless ``config.independent_level_noise``
    is set, one pair of uniform draws is shared by all levels in the step.
    """
    if len(batch) == 0:
        raise ContractViolation("empty batch")
    if level >= 2 and (snapshot is None or snapshot.level != level):
        raise ContractViolation(f"stage {level} needs the prefix snapshot taken for level {level}")
    cb = model.codebook
    g = ad.Graph()
    enc, head, cw, nodes = _bind(g, model)
    x = g.constant(batch.features)
    z_e = models.encode(x, enc)
    n_sym = z_e.value.size // cb.dim

    shared = None
    if not config.independent_level_noise:
        shared = (noise_rng.random(n_sym), noise_rng.random(n_sym))

    task_terms, vq_terms, logits, sent, received = [], [], [], [], []
    for j in range(1, level + 1):
        q = cb_mod.quantize(cb, z_e.value, j, backend=backend)
        u_err, u_sym = shared if shared else (noise_rng.random(n_sym), noise_rng.random(n_sym))
        link = ch_mod.SdmcChannel(1 << j, config.eps_train)
        s_hat = ch_mod.transmit_with(q.indices, link, u_err, u_sym, backend=backend)
        z_d = cb_mod.straight_through(z_e, cb_mod.lookup(cb, s_hat, j))
        out = models.infer(z_d, head)
        task_terms.append(ad.mean(ad.cross_entropy(out, batch.labels)))
        vq_terms.append(cb_mod.vq_loss(z_e, q, config.gamma_for(j), codewords=cw))
        logits.append(out.value)
        sent.append(q.indices)
        received.append(s_hat)

    task = task_terms[0]
    for t in task_terms[1:]:
        task = task + t
    vq = vq_terms[0]
    for t in vq_terms[1:]:
        vq = vq + t

    n_prefix = 0 if level == 1 else 1 << (level - 1)
    if n_prefix:
        drift_raw = ad.squared_l2(cw[:n_prefix] - snapshot.prefix)
    else:
        drift_raw = ad.squared_l2(cw[:0])
    drift = ad.scale(drift_raw, config.eta_for(level))
    total = task + vq + drift
    return MrLoss(g, total, task, vq, drift, logits, sent, received, nodes)


class Adam:
    """Adam with per-array moment buffers keyed by name."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads, active_rows=None):
        """Update ``params[name]`` in place.

        ``active_rows[name] = n`` restricts the update (and the moment
        buffers) of that array to its first ``n`` rows.
        """
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        active_rows = active_rows or {}
        for name, p in params.items():
            gr = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            rows = active_rows.get(name)
            sel = slice(None) if rows is None else slice(0, rows)
            m, v = self.m[name], self.v[name]
            m[sel] = b1 * m[sel] + (1.0 - b1) * gr[sel]
            v[sel] = b2 * v[sel] + (1.0 - b2) * gr[sel] * gr[sel]
            p[sel] -= self.lr * (m[sel] / c1) / (np.sqrt(v[sel] / c2) + self.eps)


def optimizer_step(opt, model, loss, grads, level):
    """Apply one Adam step to encoder, head, and the level-``level`` codewords."""
    params = _param_arrays(model)
    named = {name: grads[node.id] for name, node in loss.param_nodes.items()}
    opt.step(params, named, active_rows={"codebook": 1 << level})


def _param_arrays(model):
    out = {"codebook": model.codebook.codewords}
    for prefix, mlp in (("encoder", model.encoder), ("head", model.head)):
        for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
            out[f"{prefix}.{i}.weight"] = w
            out[f"{prefix}.{i}.bias"] = b
    return out


def _encoder_std(model, features):
    z = models.encode(features, model.encoder)
    std = z.reshape(-1, model.codebook.dim).std(axis=0)
    # degenerate encoder (e.g. all-zero weights): fall back to unit spread
    return np.where(std > 0, std, 1.0)


@dataclass
class TrainResult:
    model: models.MrTocModel
    log: list             # dicts keyed by LOG_COLUMNS
    snapshots: list


def _n_batches(config, n):
    if config.num_batches is not None:
        return config.num_batches
    return data_mod.num_batches_for(n, config.batch_size)


def train_progressive(config, dataset, hooks=None, backend=None, model=None):
    """Run the full progressive schedule and return a :class:`TrainResult`.

    ``hooks`` may define ``on_stage_start(level, model)`` and
    ``on_step(level, epoch, model, loss)``; both observe, never modify.
    """
    if model is None:
        model = models.build_model(
            dataset.feature_dim, config.m_subvectors, config.dim, config.k_max,
            dataset.num_classes, rng_mod.stream(config.seed, "init"),
            config.encoder_hidden, config.head_hidden)
    opt = Adam(lr=config.learning_rate)
    n_batches = _n_batches(config, len(dataset))
    history, snapshots = [], []

    for level in range(1, config.levels + 1):
        spread = _encoder_std(model, dataset.features)
        model.codebook = cb_mod.extend_level(
            model.codebook, level, rng_mod.stream(config.seed, "codeword-init", level), scale=spread)
        snap = StageSnapshot(level, model.codebook.prefix_snapshot.copy())
        snapshots.append(snap)
        if hooks is not None and hasattr(hooks, "on_stage_start"):
            hooks.on_stage_start(level, model)

        for epoch in range(config.epochs_per_level):
            epoch_key = (level - 1) * config.epochs_per_level + epoch
            noise = rng_mod.stream(config.seed, "channel-train", epoch_key)
            sums = np.zeros(4)
            correct = seen = 0
            for batch in data_mod.batches(dataset, n_batches, config.seed, epoch_key):
                loss = mr_loss(batch, level, model, snap, config, noise, backend=backend)
                total = float(loss.total.value)
                if not np.isfinite(total):
                    raise DivergenceError(level, epoch, f"loss={total}")
                grads = ad.evaluate_with_gradients(loss.graph, loss.total)
                optimizer_step(opt, model, loss, grads, level)
                w = len(batch)
                sums += w * np.array([total, float(loss.task.value), float(loss.vq.value),
                                      float(loss.drift.value)])
                correct += int((loss.logits[-1].argmax(axis=1) == batch.labels).sum())
                seen += w
                if hooks is not None and hasattr(hooks, "on_step"):
                    hooks.on_step(level, epoch, model, loss)
            means = sums / seen
            row = {"level": level, "epoch": epoch, "mean_loss": means[0], "task_loss": means[1],
                   "vq_loss": means[2], "drift_loss": means[3], "train_acc": correct / seen}
            snap.epoch_stats.append(row)
            history.append(row)
            log.debug("level %d epoch %d loss %.5f acc %.4f", level, epoch, means[0], row["train_acc"])
        model.codebook.trained_levels = level

    return TrainResult(model, history, snapshots)


def train_reference(config, dataset, epochs=None, backend=None):
    """Encoder and head trained jointly with no quantizer and no channel.

    Same architecture, initialization stream, optimizer and batching as the
    progressive run; ``epochs`` defaults to the progressive run's total.
    """
    model = models.build_model(
        dataset.feature_dim, config.m_subvectors, config.dim, config.k_max,
        dataset.num_classes, rng_mod.stream(config.seed, "init"),
        config.encoder_hidden, config.head_hidden)
    epochs = config.epochs_per_level * config.levels if epochs is None else epochs
    opt = Adam(lr=config.learning_rate)
    n_batches = _n_batches(config, len(dataset))
    for epoch in range(epochs):
        for batch in data_mod.batches(dataset, n_batches, config.seed, epoch):
            g = ad.Graph()
            enc, head, _, nodes = _bind(g, model)
            out = models.infer(models.encode(g.constant(batch.features), enc), head)
            loss = ad.mean(ad.cross_entropy(out, batch.labels))
            if not np.isfinite(loss.value):
                raise DivergenceError(0, epoch, "reference model")
            grads = ad.evaluate_with_gradients(g, loss)
            params = _param_arrays(model)
            del params["codebook"]
            opt.step(params, {k: grads[nodes[k].id] for k in params})
    return model


def reference_accuracy(model, dataset):
    logits = models.infer(models.encode(dataset.features, model.encoder), model.head)
    return float((logits.argmax(axis=1) == dataset.labels).mean())


def write_log_csv(rows, path_or_file, preamble=None):
    def _write(fh):
        if preamble:
            fh.write(f"# {preamble}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r["level"], r["epoch"]] + [repr(float(r[c])) for c in LOG_COLUMNS[2:]])

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", newline="", encoding="utf-8") as fh:
            _write(fh)
