"""Toy-scale GIN and hyper-GIN graph classifiers.

Plain GIN-eps updates node states with an iteration-specific MLP:

    h_v^k = MLP_k((1 + eps_k) h_v^{k-1} + sum_{u in N(v)} h_u^{k-1})

The hyper variant replaces that update with a weight-generating network f and
a dynamic network g, both fed the damped aggregate

    z_v   = c h_v^0 + (1 - c) (h_v^{k-1} + sum_{u in N(v)} h_u^{k-1})
    h_v^k = g(z_v; f(z_v))

with one generated weight set per node. f and g are shared by all
iterations; c is clipped to [0, 1]. Unlike the decoder, f sees z_v itself,
not its absolute value. Both variants read out the concatenation of
per-iteration node sums through a head MLP.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import MlpSpec, ParameterStore
from .training import TrainConfig

FAMILIES = ("cycle-vs-path", "triangle-count-parity", "density-pair")


@dataclass(frozen=True, eq=False)
class GraphInstance:
    adjacency: np.ndarray
    features: np.ndarray
    label: int

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.uint8)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("adjacency must be square")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(a)):
            raise ValueError("self-loops are not allowed")
        x = np.asarray(self.features, dtype=float)
        if x.ndim != 2 or x.shape[0] != a.shape[0]:
            raise ValueError("features must be (num_nodes, dim)")
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "label", int(self.label))

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    def edges(self):
        u, v = np.nonzero(np.triu(self.adjacency))
        return list(zip(u.tolist(), v.tolist()))

    def permuted(self, perm) -> "GraphInstance":
        """Relabel so that new node i is old node perm[i]."""
        perm = np.asarray(perm)
        return GraphInstance(self.adjacency[np.ix_(perm, perm)], self.features[perm], self.label)


@dataclass
class GraphBatch:
    """Disjoint union of graphs as one block-diagonal adjacency."""

    adjacency: np.ndarray   # (N, N) float
    features: np.ndarray    # (N, F)
    segments: np.ndarray    # (G, N) node-to-graph indicator
    labels: np.ndarray      # (G,)

    @classmethod
    def of(cls, graphs):
        graphs = list(graphs)
        if not graphs or any(g.num_nodes == 0 for g in graphs):
            raise ValueError("every graph needs at least one node")
        sizes = [g.num_nodes for g in graphs]
        total = sum(sizes)
        adj = np.zeros((total, total))
        seg = np.zeros((len(graphs), total))
        at = 0
        for i, g in enumerate(graphs):
            adj[at:at + g.num_nodes, at:at + g.num_nodes] = g.adjacency
            seg[i, at:at + g.num_nodes] = 1.0
            at += g.num_nodes
        feats = np.concatenate([g.features for g in graphs])
        return cls(adj, feats, seg, np.array([g.label for g in graphs], dtype=float))


@dataclass(frozen=True)
class GinConfig:
    feature_dim: int = 1
    hidden: int = 16
    iterations: int = 3
    kind: str = "hyper"          # "hyper" or "gin"
    f_hidden: tuple = (16, 16, 16)
    g_hidden: tuple = (8, 8)
    head_hidden: int = 16
    learn_eps: bool = True

    def __post_init__(self):
        if self.kind not in ("hyper", "gin"):
            raise ValueError("kind must be 'hyper' or 'gin'")
        if self.iterations < 1:
            raise ValueError("need at least one message passing iteration")

    def to_dict(self):
        return {"feature_dim": self.feature_dim, "hidden": self.hidden,
                "iterations": self.iterations, "kind": self.kind,
                "f_hidden": list(self.f_hidden), "g_hidden": list(self.g_hidden),
                "head_hidden": self.head_hidden, "learn_eps": self.learn_eps}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("f_hidden", "g_hidden"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class GinModel:
    config: GinConfig
    store: ParameterStore
    mlp0: MlpSpec
    mlps: tuple          # per-iteration MLP_k (plain GIN only)
    f_spec: MlpSpec | None
    g_spec: MlpSpec | None
    head: MlpSpec
    fixed: dict = field(default_factory=dict)   # non-learned eps values

    @property
    def damping(self) -> float:
        return float(np.clip(self.store["damping"], 0.0, 1.0))


def new_model(config: GinConfig = GinConfig(), seed: int = 0, damping=None) -> GinModel:
    rng = np.random.default_rng(seed)
    h, k = config.hidden, config.iterations
    mlp0 = MlpSpec((config.feature_dim, h, h), ("tanh", "tanh"), bias=True)
    head = MlpSpec((k * h, config.head_hidden, 1), ("tanh", "linear"), bias=True)
    store = ParameterStore()
    store.add("mlp0", mlp0.init(rng))
    store.add("head", head.init(rng))
    fixed = {}
    eps_names = ["eps0"] + ([f"eps{i}" for i in range(1, k + 1)] if config.kind == "gin" else [])
    for name in eps_names:
        if config.learn_eps:
            store.add(name, np.array(0.0))
        else:
            fixed[name] = 0.0
    mlps, f_spec, g_spec = (), None, None
    if config.kind == "gin":
        mlps = tuple(MlpSpec((h, h, h), ("tanh", "tanh"), bias=True) for _ in range(k))
        for i, spec in enumerate(mlps, start=1):
            store.add(f"mlp{i}", spec.init(rng))
    else:
        g_spec = MlpSpec.uniform((h,) + tuple(config.g_hidden) + (h,))
        f_spec = MlpSpec.uniform((h,) + tuple(config.f_hidden) + (g_spec.num_params,),
                                 last="linear", bias=True)
        theta_f = f_spec.init(rng)
        # keep generated g weights at a Glorot-like scale
        a, b = f_spec.layer_shapes()[-1]
        start = f_spec.num_params - (a * b + b)
        theta_f[start:start + a * b] *= 0.1
        theta_f[start + a * b:] = g_spec.init(rng)
        store.add("theta_f", theta_f)
        c = rng.uniform(0.0, 1.0) if damping is None else damping
        store.add("damping", np.array(c), bounds=(0.0, 1.0))
    return GinModel(config, store, mlp0, mlps, f_spec, g_spec, head, fixed)


def _params(model: GinModel, tape, params):
    if params is not None:
        return params
    return {name: tape.const(v) for name, v in model.store.params.items()}


def _eps(model, p, name):
    return p[name] if name in p else model.fixed[name]


def _as_batch(graph) -> GraphBatch:
    if isinstance(graph, GraphBatch):
        return graph
    if isinstance(graph, GraphInstance):
        return GraphBatch.of([graph])
    return GraphBatch.of(graph)


def gin_step_0(model: GinModel, graph, params=None, tape=None) -> ad.Value:
    """h^0 = MLP_0((1 + eps_0) x_v + sum of neighbor features)."""
    batch = _as_batch(graph)
    tape = tape or _tape_of(params)
    p = _params(model, tape, params)
    x = tape.const(batch.features)
    agg = (1.0 + _eps(model, p, "eps0")) * x + ad.matmul(tape.const(batch.adjacency), x)
    return ad.affine(model.mlp0, p["mlp0"], agg)


def damped_input(model: GinModel, adjacency, h_prev, h0, p) -> ad.Value:
    c = p["damping"]
    agg = h_prev + ad.matmul(adjacency, h_prev)
    return c * h0 + (1.0 - c) * agg


def hyper_gin_step(model: GinModel, graph, h_prev, h0, params=None, tape=None,
                   return_theta: bool = False):
    """One hyper-GIN update with per-node generated g weights."""
    batch = _as_batch(graph)
    tape = tape or _tape_of(params, h_prev, h0)
    p = _params(model, tape, params)
    h_prev, h0 = ad.as_value(tape, h_prev), ad.as_value(tape, h0)
    z = damped_input(model, tape.const(batch.adjacency), h_prev, h0, p)
    theta = ad.affine(model.f_spec, p["theta_f"], z)
    h = ad.affine(model.g_spec, theta, z)
    return (h, theta) if return_theta else h


def gin_step(model: GinModel, graph, h_prev, k: int, params=None, tape=None) -> ad.Value:
    """Plain GIN-eps update for iteration k >= 1."""
    batch = _as_batch(graph)
    tape = tape or _tape_of(params, h_prev)
    p = _params(model, tape, params)
    h_prev = ad.as_value(tape, h_prev)
    agg = (1.0 + _eps(model, p, f"eps{k}")) * h_prev \
        + ad.matmul(tape.const(batch.adjacency), h_prev)
    return ad.affine(model.mlps[k - 1], p[f"mlp{k}"], agg)


def node_states(model: GinModel, graph, params=None, tape=None):
    """[h^0, h^1, ..., h^K] for a graph or batch."""
    batch = _as_batch(graph)
    tape = tape or _tape_of(params)
    h0 = gin_step_0(model, batch, params, tape)
    states = [h0]
    for k in range(1, model.config.iterations + 1):
        if model.config.kind == "hyper":
            states.append(hyper_gin_step(model, batch, states[-1], h0, params, tape))
        else:
            states.append(gin_step(model, batch, states[-1], k, params, tape))
    return states


def graph_embedding(model: GinModel, graph, states, tape=None) -> ad.Value:
    """h_G: concatenation over k = 1..K of the node sums of h^k, (G, K*hidden)."""
    batch = _as_batch(graph)
    if len(states) < model.config.iterations + 1:
        raise ValueError("readout needs all K iterations")
    tape = tape or states[0].tape
    seg = tape.const(batch.segments)
    return ad.concat([ad.matmul(seg, h) for h in states[1:]], axis=-1)


def readout(model: GinModel, graph, states, params=None, tape=None) -> ad.Value:
    """Class score (logit of label 1) per graph."""
    tape = tape or states[0].tape
    p = _params(model, tape, params)
    emb = graph_embedding(model, graph, states, tape)
    out = ad.affine(model.head, p["head"], emb)
    return ad.reshape(out, out.shape[:-1])


def scores(model: GinModel, graphs) -> np.ndarray:
    tape = ad.Tape(record=False)
    batch = _as_batch(graphs)
    states = node_states(model, batch, tape=tape)
    return readout(model, batch, states, tape=tape).data


def classification_loss(logits: ad.Value, labels) -> ad.Value:
    labels = np.asarray(labels, dtype=float)
    per = labels * ad.softplus(-logits) + (1.0 - labels) * ad.softplus(logits)
    return ad.mean_op(per)


def accuracy(model: GinModel, graphs) -> float:
    graphs = list(graphs)
    pred = scores(model, graphs) > 0
    return float(np.mean(pred == np.array([g.label for g in graphs], dtype=bool)))


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, ad.Value):
            return x.tape
        if isinstance(x, dict):
            for v in x.values():
                if isinstance(v, ad.Value):
                    return v.tape
    return ad.Tape(record=False)


class GinClassifier:
    """Adapter for ``training.train``: minibatches of training graphs, error on held-out graphs."""

    def __init__(self, model: GinModel, train_graphs, val_graphs=None):
        self.model = model
        self.store = model.store
        self.train_graphs = list(train_graphs)
        self.val_graphs = list(val_graphs) if val_graphs is not None else self.train_graphs

    def sample(self, config, rng):
        idx = rng.choice(len(self.train_graphs), size=min(config.batch_size, len(self.train_graphs)),
                         replace=False)
        return GraphBatch.of([self.train_graphs[i] for i in idx])

    def loss(self, tape, params, batch, normalization="bit"):
        states = node_states(self.model, batch, params, tape)
        logits = readout(self.model, batch, states, params, tape)
        return classification_loss(logits, batch.labels)

    def validation_set(self, config, seed):
        return self.val_graphs

    def validation_error(self, graphs) -> float:
        return 1.0 - accuracy(self.model, graphs)

    def meta(self):
        return {"kind": "gin", "config": self.model.config.to_dict()}


def model_from_checkpoint(store: ParameterStore, meta: dict) -> GinModel:
    model = new_model(GinConfig.from_dict(meta["config"]))
    for name in model.store.names():
        if name not in store:
            raise ValueError(f"checkpoint lacks parameter {name!r}")
    model.store.params.update({k: v.copy() for k, v in store.params.items()})
    return model


# --- synthetic data -----------------------------------------------------------

def cycle_graph(n: int, label: int = 1, dim: int = 1) -> GraphInstance:
    a = np.zeros((n, n), dtype=np.uint8)
    for i in range(n):
        a[i, (i + 1) % n] = a[(i + 1) % n, i] = 1
    return GraphInstance(a, np.ones((n, dim)), label)


def path_graph(n: int, label: int = 0, dim: int = 1) -> GraphInstance:
    a = np.zeros((n, n), dtype=np.uint8)
    for i in range(n - 1):
        a[i, i + 1] = a[i + 1, i] = 1
    return GraphInstance(a, np.ones((n, dim)), label)


def _random_graph(n, p, rng):
    upper = np.triu(rng.random((n, n)) < p, 1)
    return (upper | upper.T).astype(np.uint8)


def triangle_count(adjacency) -> int:
    a = np.asarray(adjacency, dtype=np.int64)
    return int(np.trace(a @ a @ a) // 6)


def make_synthetic_dataset(family: str, sizes=range(6, 13), seed: int = 0, per_size: int = 10,
                           test_fraction: float = 0.2):
    """Balanced labelled graphs, shuffled and split into (train, test).

    cycle-vs-path: randomly relabelled C_n (label 1) and P_n (label 0);
    triangle-count-parity: G(n, 0.3) graphs labelled by triangle count mod 2;
    density-pair: G(n, 0.2) (label 0) against G(n, 0.5) (label 1).
    """
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}")
    rng = np.random.default_rng(seed)
    graphs = []
    for n in sizes:
        if family == "cycle-vs-path":
            for _ in range(per_size):
                graphs.append(cycle_graph(n).permuted(rng.permutation(n)))
                graphs.append(path_graph(n).permuted(rng.permutation(n)))
        elif family == "triangle-count-parity":
            want = {0: per_size, 1: per_size}
            while any(want.values()):
                a = _random_graph(n, 0.3, rng)
                label = triangle_count(a) % 2
                if want[label]:
                    want[label] -= 1
                    graphs.append(GraphInstance(a, np.ones((n, 1)), label))
        else:
            for _ in range(per_size):
                graphs.append(GraphInstance(_random_graph(n, 0.2, rng), np.ones((n, 1)), 0))
                graphs.append(GraphInstance(_random_graph(n, 0.5, rng), np.ones((n, 1)), 1))
    order = rng.permutation(len(graphs))
    graphs = [graphs[i] for i in order]
    cut = int(round(len(graphs) * (1.0 - test_fraction)))
    return graphs[:cut], graphs[cut:]


def wl_colors(graph: GraphInstance, iterations: int):
    """Sorted multiset of 1-WL colors after the given number of refinements."""
    # colors are the nested signatures themselves, so they compare across graphs
    colors = [()] * graph.num_nodes
    nbrs = [np.nonzero(row)[0].tolist() for row in graph.adjacency]
    for _ in range(iterations):
        colors = [(colors[v], tuple(sorted(colors[u] for u in nbrs[v])))
                  for v in range(graph.num_nodes)]
    return sorted(colors)


def dump_graphs(graphs, path):
    """Line format: ``graph <n> <edges> <dim> <label>``, then ``e u v`` and ``x ...`` lines."""
    lines = ["# hypermsg graphs v1"]
    for g in graphs:
        edges = g.edges()
        lines.append(f"graph {g.num_nodes} {len(edges)} {g.features.shape[1]} {g.label}")
        lines.extend(f"e {u} {v}" for u, v in edges)
        lines.extend("x " + " ".join(repr(float(t)) for t in row) for row in g.features)
    Path(path).write_text("\n".join(lines) + "\n")


def load_graphs(path):
    graphs = []
    rows = [ln.split() for ln in Path(path).read_text().splitlines()
            if ln.strip() and not ln.startswith("#")]
    i = 0
    while i < len(rows):
        head = rows[i]
        if head[0] != "graph" or len(head) != 5:
            raise ValueError(f"expected a 'graph' header, got {' '.join(head)!r}")
        n, m, dim, label = map(int, head[1:])
        a = np.zeros((n, n), dtype=np.uint8)
        for u, v in (map(int, r[1:]) for r in rows[i + 1:i + 1 + m]):
            a[u, v] = a[v, u] = 1
        feats = np.array([[float(t) for t in r[1:]] for r in rows[i + 1 + m:i + 1 + m + n]])
        graphs.append(GraphInstance(a, feats.reshape(n, dim), label))
        i += 1 + m + n
    return graphs


def default_train_config(**overrides) -> TrainConfig:
    """Training settings that learn the synthetic tasks reliably at desk scale."""
    base = {"lr": 1e-3, "batch_size": 64, "steps": 600, "gradient_clip_norm": 1.0,
            "variant": "gin", "eval_every": 0}
    base.update(overrides)
    return TrainConfig.from_dict(base)
