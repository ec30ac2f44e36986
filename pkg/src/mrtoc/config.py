"""Experiment configuration: strict JSON loading, presets, hashing."""

import copy
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

from .errors import ConfigError
from .training import TrainConfig


@dataclass
class DataSpec:
    kind: str = "blobs"                 # "blobs" or "idx"
    num_classes: int = 10
    dim: int = 8
    samples_per_class: int = 500
    spread: float = 0.15
    images: str = None
    labels: str = None
    test_fraction: float = 0.2


@dataclass
class ModelSpec:
    m_subvectors: int = 16
    dim: int = 2
    k_max: int = 16
    encoder_hidden: list = field(default_factory=lambda: [128, 128])
    head_hidden: list = field(default_factory=lambda: [128, 128])


@dataclass
class TrainSpec:
    epochs_per_level: int = 30
    batch_size: int = 64
    num_batches: int = None
    learning_rate: float = 1e-3
    gamma: object = 0.25
    eta: object = 0.1
    eps_train: float = 0.01
    independent_level_noise: bool = False


@dataclass
class EvalSpec:
    eps_list: list = field(default_factory=lambda: [0.001, 0.01, 0.05])
    p_e_list: list = field(default_factory=lambda: [0.0, 0.001, 0.005, 0.01])
    levels: list = None                 # None -> every trained level
    trials: int = 10


@dataclass
class RateSpec:
    v_bit: float = 1000.0
    tau: float = 2.0


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/desk"
    data: DataSpec = field(default_factory=DataSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    eval: EvalSpec = field(default_factory=EvalSpec)
    rate: RateSpec = field(default_factory=RateSpec)

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self):
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def provenance(self):
        return f"mrtoc config_sha256={self.digest()} seed={self.seed}"

    def train_config(self):
        m, t = self.model, self.train
        return TrainConfig(
            k_max=m.k_max, m_subvectors=m.m_subvectors, dim=m.dim,
            encoder_hidden=tuple(m.encoder_hidden), head_hidden=tuple(m.head_hidden),
            epochs_per_level=t.epochs_per_level, batch_size=t.batch_size,
            num_batches=t.num_batches, learning_rate=t.learning_rate,
            gamma=tuple(t.gamma) if isinstance(t.gamma, list) else t.gamma,
            eta=tuple(t.eta) if isinstance(t.eta, list) else t.eta,
            eps_train=t.eps_train, independent_level_noise=t.independent_level_noise,
            seed=self.seed)


_SECTIONS = {"data": DataSpec, "model": ModelSpec, "train": TrainSpec,
             "eval": EvalSpec, "rate": RateSpec}


def _build(cls, raw, path):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(raw).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown config key {where!r}")
    kwargs = {}
    for key, value in raw.items():
        sub = _SECTIONS.get(key) if cls is ExperimentConfig else None
        kwargs[key] = _build(sub, value, key) if sub else value
    return cls(**kwargs)


def _require(cond, key, msg):
    if not cond:
        raise ConfigError(f"invalid value for {key!r}: {msg}")


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def validate(cfg):
    d, m, t, e, r = cfg.data, cfg.model, cfg.train, cfg.eval, cfg.rate
    _require(_is_int(cfg.seed) and cfg.seed >= 0, "seed", "non-negative integer")
    _require(isinstance(cfg.output_dir, str) and cfg.output_dir, "output_dir", "non-empty string")
    _require(d.kind in ("blobs", "idx"), "data.kind", "'blobs' or 'idx'")
    if d.kind == "blobs":
        _require(_is_int(d.num_classes) and d.num_classes >= 2, "data.num_classes", "integer >= 2")
        _require(_is_int(d.dim) and d.dim >= 1, "data.dim", "positive integer")
        _require(_is_int(d.samples_per_class) and d.samples_per_class >= 1,
                 "data.samples_per_class", "positive integer")
        _require(_is_num(d.spread) and d.spread > 0, "data.spread", "positive number")
    else:
        _require(isinstance(d.images, str), "data.images", "path to an IDX image file")
        _require(isinstance(d.labels, str), "data.labels", "path to an IDX label file")
    _require(_is_num(d.test_fraction) and 0 < d.test_fraction < 1, "data.test_fraction", "in (0, 1)")
    _require(_is_int(m.m_subvectors) and m.m_subvectors >= 1, "model.m_subvectors", "positive integer")
    _require(_is_int(m.dim) and m.dim >= 1, "model.dim", "positive integer")
    _require(_is_int(m.k_max) and m.k_max >= 2 and not m.k_max & (m.k_max - 1),
             "model.k_max", "power of two >= 2")
    for key in ("encoder_hidden", "head_hidden"):
        v = getattr(m, key)
        _require(isinstance(v, list) and all(_is_int(h) and h > 0 for h in v),
                 f"model.{key}", "list of positive integers")
    _require(_is_int(t.epochs_per_level) and t.epochs_per_level >= 0,
             "train.epochs_per_level", "non-negative integer")
    _require(_is_int(t.batch_size) and t.batch_size >= 1, "train.batch_size", "positive integer")
    _require(t.num_batches is None or (_is_int(t.num_batches) and t.num_batches >= 1),
             "train.num_batches", "null or positive integer")
    _require(_is_num(t.learning_rate) and t.learning_rate > 0, "train.learning_rate", "positive number")
    levels = m.k_max.bit_length() - 1 if _is_int(m.k_max) else 0
    for key, lo_ok in (("gamma", lambda v: v > 0), ("eta", lambda v: v >= 0)):
        v = getattr(t, key)
        if isinstance(v, list):
            _require(len(v) >= levels and all(_is_num(x) and lo_ok(x) for x in v),
                     f"train.{key}", f"number or list of {levels} numbers")
        else:
            _require(_is_num(v) and lo_ok(v), f"train.{key}", "number in range")
    _require(_is_num(t.eps_train) and 0 <= t.eps_train <= 1, "train.eps_train", "in [0, 1]")
    _require(isinstance(t.independent_level_noise, bool), "train.independent_level_noise", "boolean")
    _require(isinstance(e.eps_list, list) and all(_is_num(x) and 0 <= x <= 1 for x in e.eps_list),
             "eval.eps_list", "list of numbers in [0, 1]")
    _require(isinstance(e.p_e_list, list) and all(_is_num(x) and 0 <= x <= 1 for x in e.p_e_list),
             "eval.p_e_list", "list of numbers in [0, 1]")
    _require(e.levels is None or (isinstance(e.levels, list)
                                  and all(_is_int(x) and 1 <= x <= levels for x in e.levels)),
             "eval.levels", f"null or list of levels in 1..{levels}")
    _require(_is_int(e.trials) and e.trials >= 1, "eval.trials", "positive integer")
    _require(_is_num(r.v_bit) and r.v_bit > 0, "rate.v_bit", "positive number")
    _require(_is_num(r.tau) and r.tau > 0, "rate.tau", "positive number")
    return cfg


def from_dict(raw):
    return validate(_build(ExperimentConfig, raw, ""))


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return from_dict(raw)


def apply_overrides(cfg, assignments):
    """Apply ``section.key=value`` strings; values parse as JSON, else as bare strings."""
    raw = copy.deepcopy(cfg.to_dict())
    for item in assignments:
        key, sep, text = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"unknown config key {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return from_dict(raw)


def apply_env(cfg):
    """Honor ``MRTOC_SEED``."""
    env = os.environ.get("MRTOC_SEED")
    if env is None or env == "":
        return cfg
    try:
        seed = int(env)
    except ValueError:
        raise ConfigError(f"MRTOC_SEED must be an integer, got {env!r}") from None
    return validate(dataclasses.replace(cfg, seed=seed))


def desk_preset():
    return ExperimentConfig()


def paper_preset():
    # K_max=256, N_f=1000, D=2, M=500, eps_train=0.01; long-running on CPU
    return ExperimentConfig(
        output_dir="runs/paper",
        model=ModelSpec(m_subvectors=500, dim=2, k_max=256),
        train=TrainSpec(eps_train=0.01),
        eval=EvalSpec(eps_list=[0.001, 0.01, 0.05]),
        rate=RateSpec(v_bit=1000.0, tau=2.0),
    )


PRESETS = {"desk": desk_preset, "paper": paper_preset}
