"""Define-by-run reverse-mode autodiff over float64 numpy arrays.

A :class:`Graph` records every operation in creation order, which is already a
topological order: a node can only be built from nodes that exist. Backward
walks the list in reverse.

    g = Graph()
    w = g.param(np.array(3.0))
    x = g.constant(np.array(2.0))
    loss = w * x
    grads = evaluate_with_gradients(g, loss)   # {w.id: 2.0}
"""

import numpy as np

from .errors import ContractViolation, NumericError


class Node:
    """One value in a :class:`Graph`."""

    __slots__ = ("graph", "id", "kind", "parents", "value", "backward", "is_param", "name")

    def __init__(self, graph, kind, parents, value, backward=None, is_param=False, name=None):
        self.graph = graph
        self.kind = kind
        self.parents = tuple(parents)
        self.value = value
        self.backward = backward
        self.is_param = is_param
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node #{self.id} {self.kind}{label} shape={self.value.shape}>"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)


class Graph:
    """Ordered record of nodes built during one forward pass."""

    def __init__(self):
        self.nodes = []

    def _add(self, node):
        node.id = len(self.nodes)
        self.nodes.append(node)
        return node

    def param(self, value, name=None):
        """Trainable leaf. ``value`` is wrapped, not copied."""
        return self._add(Node(self, "param", (), _as_array(value), is_param=True, name=name))

    def constant(self, value, name=None):
        return self._add(Node(self, "constant", (), _as_array(value), name=name))


def _as_array(value):
    arr = np.asarray(value, dtype=np.float64)
    return arr


def _lift(graph, x):
    if isinstance(x, Node):
        if x.graph is not graph:
            raise ContractViolation("nodes belong to different graphs")
        return x
    return graph.constant(x)


def _graph_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.graph
    raise ContractViolation("at least one operand must be a Node")


def _op(kind, parents, value, backward):
    graph = parents[0].graph
    return graph._add(Node(graph, kind, parents, value, backward))


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractViolation(
            f"{kind}: shape mismatch {a.shape} vs {b.shape}"
        ) from None


# --- elementwise -------------------------------------------------------------

def add(a, b):
    g = _graph_of(a, b)
    a, b = _lift(g, a), _lift(g, b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _op("add", (a, b), a.value + b.value,
               lambda gr: (_unbroadcast(gr, sa), _unbroadcast(gr, sb)))


def sub(a, b):
    g = _graph_of(a, b)
    a, b = _lift(g, a), _lift(g, b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _op("sub", (a, b), a.value - b.value,
               lambda gr: (_unbroadcast(gr, sa), _unbroadcast(-gr, sb)))


def mul(a, b):
    g = _graph_of(a, b)
    a, b = _lift(g, a), _lift(g, b)
    _check_broadcast("mul", a, b)
    av, bv = a.value, b.value
    return _op("mul", (a, b), av * bv,
               lambda gr: (_unbroadcast(gr * bv, av.shape), _unbroadcast(gr * av, bv.shape)))


def scale(a, c):
    """Multiply by a Python/numpy scalar constant."""
    c = float(c)
    return _op("scale", (a,), a.value * c, lambda gr: (gr * c,))


def relu(a):
    mask = a.value > 0
    return _op("relu", (a,), np.where(mask, a.value, 0.0), lambda gr: (gr * mask,))


# --- linear algebra -----------------------------------------------------------

def matmul(a, b):
    g = _graph_of(a, b)
    a, b = _lift(g, a), _lift(g, b)
    if a.value.ndim not in (1, 2) or b.value.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ContractViolation(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    av, bv = a.value, b.value

    def backward(gr):
        if av.ndim == 1:
            return gr @ bv.T, np.outer(av, gr)
        return gr @ bv.T, av.T @ gr

    return _op("matmul", (a, b), av @ bv, backward)


# --- reductions ----------------------------------------------------------------

def sum_(a):
    shape = a.shape
    return _op("sum", (a,), np.asarray(a.value.sum()), lambda gr: (np.broadcast_to(gr, shape).copy(),))


def mean(a):
    shape, n = a.shape, a.value.size
    return _op("mean", (a,), np.asarray(a.value.mean()),
               lambda gr: (np.full(shape, float(gr) / n),))


def squared_l2(a):
    """Sum of squares of all entries (a scalar)."""
    av = a.value
    return _op("squared_l2", (a,), np.asarray(np.sum(av * av)), lambda gr: (2.0 * float(gr) * av,))


# --- classification ---------------------------------------------------------------

def _softmax_values(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a):
    """Softmax over the last axis."""
    s = _softmax_values(a.value)

    def backward(gr):
        return (s * (gr - (gr * s).sum(axis=-1, keepdims=True)),)

    return _op("softmax", (a,), s, backward)


def cross_entropy(logits, labels):
    """Per-row ``-log softmax(logits)[label]``.

    ``logits`` is ``[C]`` with an integer label, or ``[B, C]`` with ``B`` labels;
    the result has shape ``[]`` or ``[B]`` respectively.
    """
    x = logits.value
    labels = np.asarray(labels, dtype=np.int64)
    batched = x.ndim == 2
    x2 = x if batched else x[None, :]
    lab = labels.reshape(-1)
    if x.ndim not in (1, 2) or lab.shape[0] != x2.shape[0]:
        raise ContractViolation(f"cross_entropy: shape mismatch logits {x.shape} vs labels {labels.shape}")
    if lab.size and (lab.min() < 0 or lab.max() >= x2.shape[1]):
        raise ContractViolation(f"cross_entropy: label out of range for {x2.shape[1]} classes")
    shifted = x2 - x2.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(x2.shape[0])
    loss = logsumexp - shifted[rows, lab]
    probs = np.exp(shifted - logsumexp[:, None])

    def backward(gr):
        gr = np.asarray(gr).reshape(-1)
        d = probs.copy()
        d[rows, lab] -= 1.0
        d *= gr[:, None]
        return (d if batched else d[0],)

    value = loss if batched else np.asarray(loss[0])
    return _op("cross_entropy", (logits,), value, backward)


# --- shape manipulation ----------------------------------------------------------------

def slice_(a, key):
    """Basic (non-fancy) indexing; the gradient scatters back into place."""
    shape = a.shape
    parts = key if isinstance(key, tuple) else (key,)
    if not all(k is None or k is Ellipsis or isinstance(k, (slice, int, np.integer)) for k in parts):
        raise ContractViolation("slice: only basic indexing is supported; use take_rows")
    try:
        value = a.value[key]
    except IndexError as exc:
        raise ContractViolation(f"slice: {exc} for shape {shape}") from None
    value = np.array(value, copy=True)

    def backward(gr):
        out = np.zeros(shape)
        out[key] = gr
        return (out,)

    return _op("slice", (a,), value, backward)


def concat(nodes, axis=0):
    nodes = list(nodes)
    g = _graph_of(*nodes)
    nodes = [_lift(g, n) for n in nodes]
    try:
        value = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError:
        shapes = ", ".join(str(n.shape) for n in nodes)
        raise ContractViolation(f"concat: shape mismatch among {shapes}") from None
    bounds = np.cumsum([n.shape[axis] for n in nodes])[:-1]

    def backward(gr):
        return tuple(np.split(gr, bounds, axis=axis))

    return _op("concat", nodes, value, backward)


def reshape(a, shape):
    old = a.shape
    try:
        value = a.value.reshape(shape)
    except ValueError:
        raise ContractViolation(f"reshape: cannot reshape {old} to {shape}") from None
    return _op("reshape", (a,), value, lambda gr: (gr.reshape(old),))


def take_rows(a, indices):
    """Gather rows ``a[indices]`` along axis 0; duplicate rows accumulate gradient."""
    idx = np.asarray(indices, dtype=np.int64)
    shape = a.shape
    if idx.size and (idx.min() < 0 or idx.max() >= shape[0]):
        raise ContractViolation(f"take_rows: index out of range for {shape[0]} rows")

    def backward(gr):
        out = np.zeros(shape)
        np.add.at(out, idx, gr)
        return (out,)

    return _op("take_rows", (a,), a.value[idx], backward)


# --- gradient control ---------------------------------------------------------------------

def stop_gradient(a):
    """Identity on the forward pass, zero derivative on the backward pass."""
    if a.kind == "stop_gradient":
        return a
    return _op("stop_gradient", (a,), a.value, lambda gr: (None,))


def straight_through(a, forward_value):
    """Emit ``forward_value`` while passing gradients to ``a`` unchanged.

    Equivalent to ``a + stop_gradient(forward_value - a)`` but the forward
    value is ``forward_value`` exactly, with no rounding from the add/sub.
    """
    fv = _as_array(forward_value.value if isinstance(forward_value, Node) else forward_value)
    if fv.shape != a.shape:
        raise ContractViolation(f"straight_through: shape mismatch {a.shape} vs {fv.shape}")
    return _op("straight_through", (a,), fv.copy(), lambda gr: (gr,))


# --- backward -----------------------------------------------------------------------------------

def evaluate_with_gradients(graph, loss_node):
    """Backpropagate from a scalar node; return ``{param node id: gradient}``.

    Every parameter node in the graph gets an entry (zeros when the loss does
    not depend on it). Constants and intermediates get none.
    """
    if loss_node.graph is not graph:
        raise ContractViolation("loss node does not belong to this graph")
    if loss_node.value.size != 1:
        raise ContractViolation(f"loss must be a scalar, got shape {loss_node.shape}")
    grads = {loss_node.id: np.ones_like(loss_node.value)}
    for node in reversed(graph.nodes[:loss_node.id + 1]):
        gr = grads.get(node.id)
        if gr is None or node.backward is None:
            continue
        parent_grads = node.backward(gr)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None:
                continue
            if not np.all(np.isfinite(pg)):
                raise NumericError(
                    f"non-finite gradient flowing from node #{node.id} ({node.kind}) "
                    f"into node #{parent.id} ({parent.kind})"
                )
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg
    return {
        n.id: grads.get(n.id, np.zeros_like(n.value)).reshape(n.value.shape)
        for n in graph.nodes if n.is_param
    }
