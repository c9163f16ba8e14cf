"""Sum-product belief propagation on a Tanner graph, plain or edge-weighted.

The schedule is flooding: a variable-to-check half step updates every edge
from the previous check-to-variable messages, then a check-to-variable half
step updates every edge from those. One "iteration" below is one such pair.

All message functions accept numpy arrays or tape Values with a leading batch
axis (frames) and return Values, so the same code path serves inference and
training. The check update is either exact arctanh, saturated to
|p| <= 1 - 1e-9, or its degree-q Taylor polynomial, which needs no saturation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .codes import syndrome
from .tanner import TannerGraph

CHECK_UPDATES = ("exact", "taylor")
VARIANTS = ("plain", "weighted", "hyper", "hyper_damped")
MAX_BLOCK_FRAMES = 2048


@dataclass(frozen=True)
class DecodeConfig:
    iterations: int = 5
    check_update: str = "exact"
    q: int | None = None
    variant: str = "plain"
    early_stop: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if self.check_update not in CHECK_UPDATES:
            raise ValueError(f"check_update must be one of {CHECK_UPDATES}")
        if (self.q is not None) != (self.check_update == "taylor"):
            raise ValueError("q is required for, and only for, the taylor check update")
        if self.q is not None and self.q < 0:
            raise ValueError("q must be non-negative")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")


def _tape_for(*xs):
    for x in xs:
        if isinstance(x, ad.Value):
            return x.tape
    return ad.Tape(record=False)


def edge_llr(graph: TannerGraph, llr) -> ad.Value:
    return ad.getitem(llr, (Ellipsis, graph.edge_var))


def var_to_check(graph: TannerGraph, llr, prev, weights=None) -> ad.Value:
    """x_e = tanh((l_v + sum_{e' in N(v)\\e} w_e' x_e') / 2); w = 1 when weights is None."""
    tape = _tape_for(llr, prev, weights)
    llr, prev = ad.as_value(tape, llr), ad.as_value(tape, prev)
    msgs = prev if weights is None else prev * weights
    ext = ad.take_padded(msgs, graph.ext_var_table, 0.0)
    total = edge_llr(graph, llr) + ad.sum_op(ext, axis=-1)
    return ad.tanh_op(total * 0.5)


def check_to_var(graph: TannerGraph, prev, check_update: str = "exact", q: int | None = None):
    """x_e = 2 arctanh(prod_{e' in N(c)\\e} x_e'), exact or Taylor-q."""
    tape = _tape_for(prev)
    prev = ad.as_value(tape, prev)
    p = ad.prod_last(ad.take_padded(prev, graph.ext_check_table, 1.0))
    if check_update == "exact":
        return ad.arctanh_op(p) * 2.0
    if check_update == "taylor":
        if q is None:
            raise ValueError("taylor check update needs q")
        return ad.taylor_arctanh_op(p, q) * 2.0
    raise ValueError(f"unknown check update {check_update!r}")


def marginalize(graph: TannerGraph, llr, state) -> ad.Value:
    """o_v = l_v + sum of the incoming check messages of v."""
    tape = _tape_for(llr, state)
    llr, state = ad.as_value(tape, llr), ad.as_value(tape, state)
    return llr + ad.sum_op(ad.take_padded(state, graph.var_table, 0.0), axis=-1)


def hard_decision(o) -> np.ndarray:
    """Bit 1 where o < 0; ties decide 0."""
    o = o.data if isinstance(o, ad.Value) else np.asarray(o)
    return (o < 0).astype(np.uint8)


def zero_state(graph: TannerGraph, llr) -> np.ndarray:
    shape = np.shape(llr.data if isinstance(llr, ad.Value) else llr)[:-1]
    return np.zeros(shape + (graph.num_edges,))


def unroll(graph: TannerGraph, llr, config: DecodeConfig, weights=None):
    """Run ``config.iterations`` pairs with no early stop; returns the marginals after each pair."""
    tape = _tape_for(llr, weights)
    llr = ad.as_value(tape, llr)
    state = ad.as_value(tape, zero_state(graph, llr))
    out = []
    for _ in range(config.iterations):
        odd = var_to_check(graph, llr, state, weights)
        state = check_to_var(graph, odd, config.check_update, config.q)
        out.append(marginalize(graph, llr, state))
    return out


@dataclass
class DecodeResult:
    bits: np.ndarray
    marginals: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray


def run_with_early_stop(graph: TannerGraph, llr, steps, iterations: int,
                        early_stop: bool = True) -> DecodeResult:
    """Drive an iterator of per-pair marginals, freezing frames at zero syndrome.

    Frames stop contributing once their syndrome is zero, so the result equals
    per-frame early termination; the loop ends when every frame has stopped.
    """
    llr = np.asarray(llr, dtype=float)
    single = llr.ndim == 1
    batch = llr.reshape(-1, graph.num_vars)
    nframes = batch.shape[0]
    if nframes > MAX_BLOCK_FRAMES:
        # bound peak memory: padded gathers scale with frames x edges x degree
        parts = [run_with_early_stop(graph, batch[i:i + MAX_BLOCK_FRAMES], steps, iterations,
                                     early_stop)
                 for i in range(0, nframes, MAX_BLOCK_FRAMES)]
        return DecodeResult(*(np.concatenate([getattr(p, f) for p in parts])
                              for f in ("bits", "marginals", "converged", "iterations")))
    bits = np.zeros(batch.shape, dtype=np.uint8)
    marg = np.zeros(batch.shape)
    done = np.zeros(nframes, dtype=bool)
    used = np.full(nframes, iterations, dtype=np.int64)
    it = 0
    for it, o in enumerate(steps(batch), start=1):
        o = o.data if isinstance(o, ad.Value) else np.asarray(o)
        b = hard_decision(o)
        fresh = ~done
        if early_stop:
            ok = ~syndrome(graph.code, b).any(axis=1)
            hit = fresh & ok
            bits[hit], marg[hit], used[hit] = b[hit], o[hit], it
            done |= hit
            if done.all():
                break
        if it == iterations:
            bits[fresh & ~done], marg[fresh & ~done] = b[fresh & ~done], o[fresh & ~done]
    if not early_stop:
        done = ~syndrome(graph.code, bits).any(axis=1)
    if single:
        return DecodeResult(bits[0], marg[0], bool(done[0]), int(used[0]))
    return DecodeResult(bits, marg, done, used)


def _bp_steps(graph, config, weights):
    def steps(batch):
        tape = ad.Tape(record=False)
        llr = tape.const(batch)
        state = tape.const(zero_state(graph, batch))
        w = None if weights is None else tape.const(weights)
        for _ in range(config.iterations):
            odd = var_to_check(graph, llr, state, w)
            state = check_to_var(graph, odd, config.check_update, config.q)
            yield marginalize(graph, llr, state)
    return steps


def decode(graph: TannerGraph, llr, config: DecodeConfig = DecodeConfig(), weights=None):
    """Decode one frame (n,) or a batch (B, n); early stop on zero syndrome if enabled."""
    if config.variant == "weighted" and weights is None:
        raise ValueError("weighted BP needs edge weights")
    if config.variant in ("hyper", "hyper_damped"):
        raise ValueError("use hyperdec.hyper_decode for hypernetwork variants")
    w = weights if config.variant == "weighted" else None
    return run_with_early_stop(graph, llr, _bp_steps(graph, config, w), config.iterations,
                               config.early_stop)
