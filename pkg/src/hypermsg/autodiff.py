"""Reverse-mode differentiation on an append-only tape.

Every node stores a numpy array (0-d for scalars). Nodes are appended in
creation order, so parents always precede children and ``Tape.backward`` is a
single reverse sweep. Only the primitives the decoders and graph networks need
are provided; numpy broadcasting is supported on the elementwise ops.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

ARCTANH_CLIP = 1.0 - 1e-9
CHECKPOINT_VERSION = 1


class Value:
    __slots__ = ("tape", "id", "op", "parents", "data", "requires_grad", "_backward", "name")

    __array_priority__ = 100.0

    def __init__(self, tape, data, op="const", parents=(), backward=None, name=None,
                 requires_grad=None):
        self.tape = tape
        self.data = np.asarray(data, dtype=float)
        self.op = op
        self.parents = tuple(parents)
        self._backward = backward
        self.name = name
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self.id = tape._append(self)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Value(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return getitem(self, index)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Append-only record of Values; reset before reuse.

    ``Tape(record=False)`` is an inference tape: nothing is stored, parameters
    do not require gradients, and intermediate arrays are freed as soon as they
    go out of scope.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self.nodes: list[Value] = []

    def _append(self, node: Value) -> int:
        if not self.record:
            return -1
        self.nodes.append(node)
        return len(self.nodes) - 1

    def __len__(self):
        return len(self.nodes)

    def reset(self):
        self.nodes = []

    def const(self, data) -> Value:
        return Value(self, data, requires_grad=False)

    def param(self, data, name=None) -> Value:
        return Value(self, np.array(data, dtype=float), op="param", name=name,
                     requires_grad=self.record)

    def backward(self, loss: Value) -> dict:
        """Adjoints of ``loss`` w.r.t. every node, keyed by node id."""
        if loss.tape is not self or loss.id < 0 or loss.id >= len(self.nodes) or self.nodes[loss.id] is not loss:
            raise ValueError("loss node is not on this tape")
        if loss.data.size != 1:
            raise ValueError("loss must be a scalar")
        adj = {loss.id: np.ones_like(loss.data)}
        for node in reversed(self.nodes[: loss.id + 1]):
            g = adj.pop(node.id, None)
            if g is None or node._backward is None:
                if g is not None:
                    adj[node.id] = g
                continue
            grads = node._backward(g)
            for parent, pg in zip(node.parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(pg, parent.shape)
                if parent.id in adj:
                    adj[parent.id] = adj[parent.id] + pg
                else:
                    adj[parent.id] = pg
        return adj

    def gradients(self, loss: Value, params: dict) -> dict:
        """Adjoints for a name -> Value mapping of parameter leaves."""
        adj = self.backward(loss)
        return {name: adj.get(v.id, np.zeros_like(v.data)) for name, v in params.items()}


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Value):
            return x.tape
    raise TypeError("at least one operand must be a Value")


def _lift(tape, x) -> Value:
    return x if isinstance(x, Value) else tape.const(x)


def as_value(tape, x) -> Value:
    return _lift(tape, x)


def _node(tape, data, op, parents, backward):
    needs = any(p.requires_grad for p in parents)
    return Value(tape, data, op=op, parents=parents, backward=backward if needs else None)


# --- elementwise -------------------------------------------------------------

def add(a, b) -> Value:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    return _node(tape, a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a, b) -> Value:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    return _node(tape, a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def mul(a, b) -> Value:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    ad, bd = a.data, b.data
    return _node(tape, ad * bd, "mul", (a, b), lambda g: (g * bd, g * ad))


def div(a, b) -> Value:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _node(tape, out, "div", (a, b), lambda g: (g / bd, -g * out / bd))


def neg(a: Value) -> Value:
    return _node(a.tape, -a.data, "neg", (a,), lambda g: (-g,))


def abs_val(a: Value) -> Value:
    s = np.sign(a.data)
    return _node(a.tape, np.abs(a.data), "abs", (a,), lambda g: (g * s,))


def tanh_op(a: Value) -> Value:
    t = np.tanh(a.data)
    return _node(a.tape, t, "tanh", (a,), lambda g: (g * (1.0 - t * t),))


def sigmoid(a: Value) -> Value:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(a.tape, s, "sigmoid", (a,), lambda g: (g * s * (1.0 - s),))


def softplus(a: Value) -> Value:
    """log(1 + e^x), stable for large |x|."""
    x = a.data
    out = np.logaddexp(0.0, x)
    s = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _node(a.tape, out, "softplus", (a,), lambda g: (g * s,))


def shifted_softplus(a: Value) -> Value:
    return softplus(a) - np.log(2.0)


def square(a: Value) -> Value:
    return mul(a, a)


def taylor_arctanh_series(x, q: int):
    """sum_{m=0..q} x^(2m+1)/(2m+1) on plain arrays."""
    if q < 0:
        raise ValueError("Taylor degree q must be >= 0")
    x = np.asarray(x, dtype=float)
    x2 = x * x
    term = x.copy()
    total = x.copy()
    for m in range(1, q + 1):
        term = term * x2
        total = total + term / (2 * m + 1)
    return total


def taylor_arctanh_op(a: Value, q: int) -> Value:
    x = a.data
    out = taylor_arctanh_series(x, q)

    def backward(g):
        x2 = x * x
        d = np.ones_like(x)
        p = np.ones_like(x)
        for _ in range(q):
            p = p * x2
            d = d + p
        return (g * d,)

    return _node(a.tape, out, "taylor_arctanh", (a,), backward)


def arctanh_op(a: Value, clip: float = ARCTANH_CLIP) -> Value:
    """arctanh with inputs saturated to |x| <= clip; saturated entries get zero gradient."""
    x = a.data
    xc = np.clip(x, -clip, clip)
    inside = np.abs(x) <= clip
    return _node(a.tape, np.arctanh(xc), "arctanh", (a,),
                 lambda g: (np.where(inside, g / (1.0 - xc * xc), 0.0),))


# --- reductions and shape ----------------------------------------------------

def sum_op(a: Value, axis=None) -> Value:
    shape = a.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _node(a.tape, a.data.sum(axis=axis), "sum", (a,), backward)


def mean_op(a: Value, axis=None) -> Value:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_op(a, axis) * (1.0 / count)


def prod_last(a: Value) -> Value:
    """Product over the last axis; exact gradients even with zero entries."""
    x = a.data
    if not a.requires_grad:
        return _node(a.tape, x.prod(axis=-1), "prod", (a,), None)
    ones = np.ones(x.shape[:-1] + (1,))
    prefix = np.concatenate([ones, np.cumprod(x, axis=-1)], axis=-1)
    suffix = np.concatenate([np.cumprod(x[..., ::-1], axis=-1)[..., ::-1], ones], axis=-1)
    others = prefix[..., :-1] * suffix[..., 1:]
    return _node(a.tape, prefix[..., -1], "prod", (a,), lambda g: (g[..., None] * others,))


def reshape(a: Value, shape) -> Value:
    old = a.shape
    return _node(a.tape, a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(old),))


def getitem(a: Value, index) -> Value:
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _node(a.tape, a.data[index], "getitem", (a,), backward)


def take_padded(a: Value, table, fill: float) -> Value:
    """Gather along the last axis through an index table; index == size gives ``fill``."""
    x = a.data
    table = np.asarray(table, dtype=np.int64)
    size = x.shape[-1]
    ext = np.concatenate([x, np.full(x.shape[:-1] + (1,), fill)], axis=-1)
    out = ext[..., table]
    flat = table.reshape(-1)

    def backward(g):
        scatter = sparse.csr_matrix(
            (np.ones(flat.size), (np.arange(flat.size), flat)), shape=(flat.size, size + 1))
        gflat = g.reshape(-1, flat.size)
        gx = np.asarray((scatter.T @ gflat.T).T)
        return (gx[:, :size].reshape(x.shape),)

    return _node(a.tape, out, "take", (a,), backward)


def concat(values, axis=-1) -> Value:
    tape = _tape_of(*values)
    values = [_lift(tape, v) for v in values]
    sizes = [v.shape[axis] for v in values]
    splits = np.cumsum(sizes)[:-1]
    data = np.concatenate([v.data for v in values], axis=axis)
    return _node(tape, data, "concat", tuple(values),
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def matmul(a, b) -> Value:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2) if bd.ndim > 1 else np.multiply.outer(g, bd)
        if ad.ndim == 1:
            gb = np.multiply.outer(ad, g)
        else:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1]) if bd.ndim == 2 \
                else np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _node(tape, ad @ bd, "matmul", (a, b), backward)


def rowmatvec(x, w) -> Value:
    """y[..., j] = sum_i x[..., i] w[..., i, j] with one matrix per leading index."""
    tape = _tape_of(x, w)
    x, w = _lift(tape, x), _lift(tape, w)
    xd, wd = x.data, w.data
    out = np.einsum("...i,...ij->...j", xd, wd)
    return _node(tape, out, "rowmatvec", (x, w),
                 lambda g: (np.einsum("...j,...ij->...i", g, wd),
                            np.einsum("...i,...j->...ij", xd, g)))


def linear(x, w) -> Value:
    """x @ w for a shared (in, out) matrix, per-row matrices when w has more dims."""
    w_ndim = w.ndim if isinstance(w, Value) else np.ndim(w)
    return matmul(x, w) if w_ndim == 2 else rowmatvec(x, w)


# --- MLPs --------------------------------------------------------------------

ACTIVATIONS = {
    "tanh": tanh_op,
    "shifted-softplus": shifted_softplus,
    "linear": lambda v: v,
}


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths (input first) and one activation tag per layer."""

    widths: tuple
    activations: tuple
    bias: bool = False

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        acts = tuple(self.activations)
        if len(widths) < 2:
            raise ValueError("an MLP needs at least one layer")
        if min(widths) <= 0:
            raise ValueError("layer widths must be positive")
        if len(acts) != len(widths) - 1:
            raise ValueError(f"{len(widths) - 1} layers need as many activations, got {len(acts)}")
        unknown = set(acts) - set(ACTIVATIONS)
        if unknown:
            raise ValueError(f"unknown activation(s) {sorted(unknown)}")
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "activations", acts)

    @classmethod
    def uniform(cls, widths, activation="tanh", last="tanh", bias=False):
        n = len(widths) - 1
        return cls(tuple(widths), (activation,) * (n - 1) + (last,), bias)

    @property
    def num_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def input_width(self) -> int:
        return self.widths[0]

    @property
    def output_width(self) -> int:
        return self.widths[-1]

    def layer_shapes(self):
        return [(a, b) for a, b in zip(self.widths[:-1], self.widths[1:])]

    @property
    def num_params(self) -> int:
        return sum(a * b + (b if self.bias else 0) for a, b in self.layer_shapes())

    def init(self, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
        """Flat parameter vector, Glorot-uniform weights and biases."""
        chunks = []
        for a, b in self.layer_shapes():
            lim = scale * np.sqrt(6.0 / (a + b))
            chunks.append(rng.uniform(-lim, lim, size=a * b))
            if self.bias:
                chunks.append(rng.uniform(-lim, lim, size=b))
        return np.concatenate(chunks)

    def to_dict(self):
        return {"widths": list(self.widths), "activations": list(self.activations),
                "bias": self.bias}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["widths"]), tuple(d["activations"]), bool(d.get("bias", False)))


def affine(spec: MlpSpec, params: Value, x: Value) -> Value:
    """Run an MLP on ``x`` with weights sliced from the flat ``params``.

    ``params`` is either one vector of length ``spec.num_params`` shared by all
    rows of ``x``, or an array (..., num_params) giving every row of ``x`` its
    own generated weights.
    """
    p_shape = params.shape
    if p_shape[-1] != spec.num_params:
        raise ValueError(f"parameter width {p_shape[-1]} != MLP parameter count {spec.num_params}")
    if x.shape[-1] != spec.input_width:
        raise ValueError(f"input width {x.shape[-1]} != MLP input width {spec.input_width}")
    lead = p_shape[:-1]
    offset = 0
    h = x
    for (a, b), act in zip(spec.layer_shapes(), spec.activations):
        w = reshape(getitem(params, (Ellipsis, slice(offset, offset + a * b))), lead + (a, b))
        offset += a * b
        h = linear(h, w)
        if spec.bias:
            h = h + getitem(params, (Ellipsis, slice(offset, offset + b)))
            offset += b
        h = ACTIVATIONS[act](h)
    return h


# --- parameters and optimizer ------------------------------------------------

@dataclass
class ParameterStore:
    """Named float64 arrays with Adam moment buffers.

    ``bounds`` maps a name to (low, high); those parameters are clipped after
    every optimizer step.
    """

    params: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    def add(self, name, value, bounds=None):
        value = np.array(value, dtype=float)
        self.params[name] = value
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)
        if bounds is not None:
            self.bounds[name] = tuple(bounds)
        self.apply_bounds()

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    def leaves(self, tape: Tape) -> dict:
        return {name: tape.param(val, name=name) for name, val in self.params.items()}

    def apply_bounds(self):
        for name, (lo, hi) in self.bounds.items():
            if name in self.params:
                # np.clip returns a numpy scalar for 0-d input; keep an ndarray
                self.params[name] = np.array(np.clip(self.params[name], lo, hi), dtype=float)

    def copy(self) -> "ParameterStore":
        return ParameterStore(
            {k: v.copy() for k, v in self.params.items()}, dict(self.bounds),
            {k: v.copy() for k, v in self.m.items()}, {k: v.copy() for k, v in self.v.items()},
            self.step)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(v) for v in self.params.values()])


def adam_step(store: ParameterStore, grads: dict, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> ParameterStore:
    """In-place bias-corrected Adam update, then bounds clipping."""
    for name, g in grads.items():
        if name not in store.params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != store.params[name].shape:
            raise ValueError(f"gradient shape {np.shape(g)} != parameter shape "
                             f"{store.params[name].shape} for {name!r}")
    store.step += 1
    t = store.step
    for name, g in grads.items():
        m = store.m[name] = beta1 * store.m[name] + (1 - beta1) * g
        v = store.v[name] = beta2 * store.v[name] + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        store.params[name] = np.asarray(store.params[name] - lr * m_hat / (np.sqrt(v_hat) + eps))
    store.apply_bounds()
    return store


def clip_grad_norm(grads: dict, max_norm: float | None) -> float:
    """Scale gradients in place to a global L2 norm of at most ``max_norm``; returns the norm."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm is not None and np.isfinite(norm) and norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


# --- checkpoints -------------------------------------------------------------

def save_checkpoint(path, store: ParameterStore, meta: dict | None = None):
    """Write parameters to ``.npz`` with a JSON header under ``__meta__``."""
    header = {"format": "hypermsg-checkpoint", "version": CHECKPOINT_VERSION,
              "bounds": {k: list(v) for k, v in store.bounds.items()},
              "step": store.step, "meta": meta or {}}
    arrays = {f"param:{k}": v for k, v in store.params.items()}
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(header)), **arrays)


def load_checkpoint(path):
    """Returns (ParameterStore, meta dict). Moment buffers start at zero."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["__meta__"]))
        if header.get("format") != "hypermsg-checkpoint":
            raise ValueError(f"{path} is not a hypermsg checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        store = ParameterStore()
        for key in data.files:
            if key.startswith("param:"):
                name = key[len("param:"):]
                store.add(name, data[key], header["bounds"].get(name))
        store.step = int(header.get("step", 0))
    return store, header["meta"]
