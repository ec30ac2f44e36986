"""Encoder and task-inference networks, plus the checkpoint file format.

Both networks are plain ReLU MLPs. ``encode`` / ``infer`` accept either a
numpy array (returns an array) or a graph :class:`~mrtoc.autodiff.Node`
(returns a node), so training and evaluation share one forward definition.
"""

import hashlib
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .codebook import NestedCodebook
from .errors import ContractViolation

CHECKPOINT_MAGIC = b"MRTOC-CKPT-1\n"


@dataclass
class MlpParams:
    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ContractViolation("MLP needs matching, non-empty weight and bias lists")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ContractViolation(f"layer {i}: weight {w.shape} incompatible with bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ContractViolation(
                    f"layer {i}: input dim {w.shape[0]} != previous output dim "
                    f"{self.weights[i - 1].shape[1]}")

    @property
    def in_dim(self):
        return self.weights[0].shape[0]

    @property
    def out_dim(self):
        return self.weights[-1].shape[1]

    def arrays(self):
        """Parameter arrays in a fixed order (w0, b0, w1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def bind(self, graph, trainable=True):
        make = graph.param if trainable else graph.constant
        return [(make(w), make(b)) for w, b in zip(self.weights, self.biases)]

    def copy(self):
        return type(self)([w.copy() for w in self.weights], [b.copy() for b in self.biases])


class EncoderParams(MlpParams):
    pass


class InferenceParams(MlpParams):
    pass


def init_mlp(cls, sizes, rng):
    """Fan-in scaled uniform weights (He-uniform bound ``sqrt(6 / fan_in)``), zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return cls(weights, biases)


def _mlp(x, layers):
    h = x
    for i, (w, b) in enumerate(layers):
        h = ad.matmul(h, w) + b
        if i < len(layers) - 1:
            h = ad.relu(h)
    return h


def _apply(x, params, expected_in, what):
    if isinstance(x, ad.Node):
        layers = params if isinstance(params, list) else params.bind(x.graph, trainable=False)
        if x.shape[-1] != expected_in:
            raise ContractViolation(f"{what}: input dim {x.shape[-1]} != expected {expected_in}")
        return _mlp(x, layers)
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape[-1] != expected_in:
        raise ContractViolation(f"{what}: input dim {arr.shape[-1]} != expected {expected_in}")
    g = ad.Graph()
    return _mlp(g.constant(arr), params.bind(g, trainable=False)).value


def _layers_in_dim(params):
    if isinstance(params, list):
        return params[0][0].shape[0]
    return params.in_dim


def encode(x, params):
    """Feature vector ``z_e`` (length ``M * D``) for input ``x`` (``[N]`` or ``[B, N]``).

    ``params`` is :class:`EncoderParams` or a list of bound ``(W, b)`` nodes.
    """
    return _apply(x, params, _layers_in_dim(params), "encode")


def infer(z_d, params):
    """Class logits from the received feature vector ``z_d``."""
    return _apply(z_d, params, _layers_in_dim(params), "infer")


@dataclass
class MrTocModel:
    encoder: EncoderParams
    head: InferenceParams
    codebook: NestedCodebook
    m_subvectors: int = field(init=False)

    def __post_init__(self):
        nf = self.encoder.out_dim
        if nf % self.codebook.dim:
            raise ContractViolation(
                f"encoder output {nf} not divisible by codeword dim {self.codebook.dim}")
        if self.head.in_dim != nf:
            raise ContractViolation(f"head input {self.head.in_dim} != encoder output {nf}")
        self.m_subvectors = nf // self.codebook.dim

    @property
    def num_classes(self):
        return self.head.out_dim

    def copy(self):
        return MrTocModel(self.encoder.copy(), self.head.copy(), self.codebook.copy())


def build_model(input_dim, m_subvectors, dim, k_max, num_classes, rng,
                encoder_hidden=(128, 128), head_hidden=(128, 128)):
    nf = m_subvectors * dim
    enc = init_mlp(EncoderParams, [input_dim, *encoder_hidden, nf], rng)
    head = init_mlp(InferenceParams, [nf, *head_hidden, num_classes], rng)
    return MrTocModel(enc, head, NestedCodebook.empty(dim, k_max))


# --- checkpoint ----------------------------------------------------------------
#
# Layout: the magic line, one line of UTF-8 JSON metadata (config echo,
# trained levels, tensor table), then the tensors as little-endian float64
# in table order. No timestamps, so identical models give identical bytes.

def _tensor_table(model):
    tensors = []
    for prefix, mlp in (("encoder", model.encoder), ("head", model.head)):
        for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
            tensors.append((f"{prefix}.{i}.weight", w))
            tensors.append((f"{prefix}.{i}.bias", b))
    tensors.append(("codebook", model.codebook.codewords))
    if model.codebook.prefix_snapshot is not None:
        tensors.append(("codebook.prefix_snapshot", model.codebook.prefix_snapshot))
    return tensors


def save_checkpoint(path, model, config=None):
    tensors = _tensor_table(model)
    payload = io.BytesIO()
    table = []
    for name, arr in tensors:
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "nbytes": len(data)})
        payload.write(data)
    cb = model.codebook
    meta = {
        "config": config,
        "codebook": {"dim": cb.dim, "k_max": cb.k_max,
                     "extended_levels": cb.extended_levels, "trained_levels": cb.trained_levels},
        "tensors": table,
        "payload_sha256": hashlib.sha256(payload.getvalue()).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(meta, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(payload.getvalue())


def load_checkpoint(path):
    """Return ``(model, config)`` from a checkpoint file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ContractViolation(f"{path}: not an MRTOC-CKPT-1 checkpoint")
    rest = blob[len(CHECKPOINT_MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise ContractViolation(f"{path}: truncated checkpoint header")
    meta = json.loads(rest[:nl].decode("utf-8"))
    payload = rest[nl + 1:]
    if hashlib.sha256(payload).hexdigest() != meta["payload_sha256"]:
        raise ContractViolation(f"{path}: checkpoint payload is corrupt")
    arrays, pos = {}, 0
    for entry in meta["tensors"]:
        n = entry["nbytes"]
        arrays[entry["name"]] = np.frombuffer(payload[pos:pos + n], dtype="<f8").reshape(entry["shape"]).astype(np.float64)
        pos += n

    def _mlp_from(prefix, cls):
        ws, bs, i = [], [], 0
        while f"{prefix}.{i}.weight" in arrays:
            ws.append(arrays[f"{prefix}.{i}.weight"])
            bs.append(arrays[f"{prefix}.{i}.bias"])
            i += 1
        return cls(ws, bs)

    c = meta["codebook"]
    cb = NestedCodebook(dim=c["dim"], k_max=c["k_max"], codewords=arrays["codebook"],
                        extended_levels=c["extended_levels"], trained_levels=c["trained_levels"],
                        prefix_snapshot=arrays.get("codebook.prefix_snapshot"))
    model = MrTocModel(_mlp_from("encoder", EncoderParams), _mlp_from("head", InferenceParams), cb)
    return model, meta["config"]
