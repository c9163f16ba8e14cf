"""Hypernetwork BP decoder with first-message damping.

The variable-to-check update of BP is replaced by a small network g whose
weights are produced, per edge and per iteration, by a network f from the
magnitudes of the incoming messages:

    u      = prev                              (undamped)
    u      = c * x0 + (1 - c) * prev           (damped, c in [0, 1])
    theta  = f(|u restricted to N(v)\\e|)
    x_e    = g([l_v, u restricted to N(v)\\e]; theta)

x0 is the first variable-to-check half step of plain BP, computed once per
frame. The check-to-variable update and the marginal readout are those of
plain BP (exact or Taylor check update).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import bp
from .autodiff import MlpSpec, ParameterStore
from .tanner import TannerGraph

THETA_MODES = ("per_edge", "shared")
X0_MODES = ("half", "pair")


@dataclass(frozen=True)
class HyperConfig:
    """Architecture of the decoder; the default widths are untuned starting points."""

    f_hidden: tuple = (32, 32, 32)
    g_hidden: tuple = (16,)
    f_bias: bool = True
    g_bias: bool = False
    check_update: str = "exact"
    q: int | None = None
    theta_mode: str = "per_edge"
    x0_mode: str = "half"
    init: str = "bp"  # "bp": start at plain BP behavior; "random": Glorot everywhere

    def __post_init__(self):
        if self.theta_mode not in THETA_MODES:
            raise ValueError(f"theta_mode must be one of {THETA_MODES}")
        if self.x0_mode not in X0_MODES:
            raise ValueError(f"x0_mode must be one of {X0_MODES}")
        if self.init not in ("bp", "random"):
            raise ValueError("init must be 'bp' or 'random'")
        bp.DecodeConfig(check_update=self.check_update, q=self.q)

    def to_dict(self):
        return {"f_hidden": list(self.f_hidden), "g_hidden": list(self.g_hidden),
                "f_bias": self.f_bias, "g_bias": self.g_bias,
                "check_update": self.check_update, "q": self.q,
                "theta_mode": self.theta_mode, "x0_mode": self.x0_mode, "init": self.init}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("f_hidden", "g_hidden"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class HyperDecoder:
    graph: TannerGraph
    f_spec: MlpSpec
    g_spec: MlpSpec
    store: ParameterStore
    config: HyperConfig = field(default_factory=HyperConfig)

    def __post_init__(self):
        dv = self.graph.max_var_degree
        if self.g_spec.input_width != dv:
            raise ValueError(f"g input width must be 1 + (max variable degree - 1) = {dv}")
        if self.g_spec.output_width != 1:
            raise ValueError("g must emit one message per edge")
        if self.f_spec.input_width != dv - 1:
            raise ValueError(f"f input width must be max variable degree - 1 = {dv - 1}")
        if self.f_spec.output_width != self.g_spec.num_params:
            raise ValueError(f"f emits {self.f_spec.output_width} values but g has "
                             f"{self.g_spec.num_params} parameters")
        if self.store["theta_f"].shape != (self.f_spec.num_params,):
            raise ValueError("theta_f does not match f's parameter count")

    @property
    def damping(self) -> float:
        return float(np.clip(self.store["damping"], 0.0, 1.0))

    @property
    def check_update(self) -> str:
        return self.config.check_update

    def with_check_update(self, check_update: str, q: int | None = None) -> "HyperDecoder":
        """Same parameters, different even-step rule."""
        cfg = replace(self.config, check_update=check_update, q=q)
        return HyperDecoder(self.graph, self.f_spec, self.g_spec, self.store, cfg)


def make_specs(graph: TannerGraph, config: HyperConfig):
    dv = graph.max_var_degree
    if dv < 2:
        raise ValueError("hypernetwork decoding needs a variable node of degree >= 2")
    g_spec = MlpSpec.uniform((dv,) + tuple(config.g_hidden) + (1,), bias=config.g_bias)
    f_spec = MlpSpec.uniform((dv - 1,) + tuple(config.f_hidden) + (g_spec.num_params,),
                             last="linear", bias=config.f_bias)
    return f_spec, g_spec


def bp_like_theta_g(g_spec: MlpSpec, gain: float = 0.1) -> np.ndarray:
    """g weights under which g(z) ~= tanh(sum(z) / 2), i.e. the plain BP update.

    The first hidden unit carries gain * sum(z); later layers pass it on and the
    output layer rescales by 1 / (2 * gain) (approximately, through the tanhs).
    """
    chunks = []
    shapes = g_spec.layer_shapes()
    for i, (a, b) in enumerate(shapes):
        w = np.zeros((a, b))
        if i == 0 and i == len(shapes) - 1:
            w[:, 0] = 0.5
        elif i == 0:
            w[:, 0] = gain
        elif i == len(shapes) - 1:
            w[0, 0] = 0.5 / gain
        else:
            w[0, 0] = 1.0
        chunks.append(w.ravel())
        if g_spec.bias:
            chunks.append(np.zeros(b))
    return np.concatenate(chunks)


def new_decoder(graph: TannerGraph, config: HyperConfig = HyperConfig(), seed: int = 0,
                damping: float | None = None) -> HyperDecoder:
    """Fresh decoder. Damping is drawn uniformly from [0, 1] unless given."""
    rng = np.random.default_rng(seed)
    f_spec, g_spec = make_specs(graph, config)
    theta_f = f_spec.init(rng)
    if config.init == "bp":
        if not f_spec.bias:
            raise ValueError("BP-equivalent initialization needs f biases")
        # last layer: small weights, bias = BP-like g weights
        a, b = f_spec.layer_shapes()[-1]
        start = f_spec.num_params - (a * b + b)
        theta_f[start:start + a * b] *= 0.01
        theta_f[start + a * b:] = bp_like_theta_g(g_spec)
    store = ParameterStore()
    store.add("theta_f", theta_f)
    c = rng.uniform(0.0, 1.0) if damping is None else damping
    store.add("damping", np.array(c), bounds=(0.0, 1.0))
    return HyperDecoder(graph, f_spec, g_spec, store, config)


def clip_damping(dec: HyperDecoder) -> HyperDecoder:
    dec.store.apply_bounds()
    return dec


def compute_x0(graph: TannerGraph, llr, mode: str = "half") -> ad.Value:
    """Initial message: one odd half step of plain BP from the zero state.

    ``mode="pair"`` takes the check-to-variable output of the first full pair.
    """
    tape = bp._tape_for(llr)
    llr = ad.as_value(tape, llr)
    x0 = bp.var_to_check(graph, llr, bp.zero_state(graph, llr))
    if mode == "pair":
        x0 = bp.check_to_var(graph, x0, "exact")
    elif mode != "half":
        raise ValueError(f"x0 mode must be one of {X0_MODES}")
    return x0


def _leaves(dec: HyperDecoder, tape, params):
    if params is not None:
        return params
    return {name: tape.const(val) for name, val in dec.store.params.items()}


def generate_theta_g(dec: HyperDecoder, u_ext: ad.Value, theta_f: ad.Value) -> ad.Value:
    """f applied to |u|: (B, E, P) per edge, or (B, 1, P) shared across edges."""
    f_in = ad.abs_val(u_ext)
    if dec.config.theta_mode == "shared":
        f_in = ad.mean_op(f_in, axis=-2)
        theta = ad.affine(dec.f_spec, theta_f, f_in)
        return ad.reshape(theta, theta.shape[:-1] + (1, theta.shape[-1]))
    return ad.affine(dec.f_spec, theta_f, f_in)


def hyper_odd_update(dec: HyperDecoder, llr, prev, x0, damped: bool, params=None,
                     return_theta: bool = False):
    """One hypernetwork variable-to-check half step; returns the new (B, E) messages."""
    tape = bp._tape_for(llr, prev, x0, *(params or {}).values())
    p = _leaves(dec, tape, params)
    llr, prev, x0 = (ad.as_value(tape, v) for v in (llr, prev, x0))
    if damped:
        c = p["damping"]
        u = c * x0 + (1.0 - c) * prev
    else:
        u = prev
    u_ext = ad.take_padded(u, dec.graph.ext_var_table, 0.0)
    theta = generate_theta_g(dec, u_ext, p["theta_f"])
    l_e = ad.reshape(bp.edge_llr(dec.graph, llr), u_ext.shape[:-1] + (1,))
    g_in = ad.concat([l_e, u_ext], axis=-1)
    out = ad.affine(dec.g_spec, theta, g_in)
    x = ad.reshape(out, out.shape[:-1])
    return (x, theta) if return_theta else x


def hyper_unroll(dec: HyperDecoder, llr, iterations: int, damped: bool, params=None):
    """Marginals after each of ``iterations`` (hyper odd, check) pairs, no early stop."""
    tape = bp._tape_for(llr, *(params or {}).values())
    llr = ad.as_value(tape, llr)
    x0 = compute_x0(dec.graph, llr, dec.config.x0_mode)
    state = ad.as_value(tape, bp.zero_state(dec.graph, llr))
    out = []
    for _ in range(iterations):
        odd = hyper_odd_update(dec, llr, state, x0, damped, params)
        state = bp.check_to_var(dec.graph, odd, dec.config.check_update, dec.config.q)
        out.append(bp.marginalize(dec.graph, llr, state))
    return out


def hyper_decode(dec: HyperDecoder, llr, iterations: int, damped: bool,
                 early_stop: bool = True) -> bp.DecodeResult:
    """Inference: bits and marginals for one frame (n,) or a batch (B, n)."""
    def steps(batch):
        tape = ad.Tape(record=False)
        yield from hyper_unroll(dec, tape.const(batch), iterations, damped)
    return bp.run_with_early_stop(dec.graph, llr, steps, iterations, early_stop)


def decoder_meta(dec: HyperDecoder) -> dict:
    return {"kind": "hyper", "config": dec.config.to_dict(),
            "f_spec": dec.f_spec.to_dict(), "g_spec": dec.g_spec.to_dict(),
            "code": dec.graph.code.name}


def decoder_from_checkpoint(graph: TannerGraph, store: ParameterStore, meta: dict) -> HyperDecoder:
    cfg = HyperConfig.from_dict(meta["config"])
    return HyperDecoder(graph, MlpSpec.from_dict(meta["f_spec"]), MlpSpec.from_dict(meta["g_spec"]),
                        store, cfg)
