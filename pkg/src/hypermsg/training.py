"""Training loops: all-zero-codeword batches, multi-iteration BCE loss, Adam.

Training on the all-zero codeword only is sound here because the AWGN/BPSK
channel is output-symmetric and every decoder in this package commutes with
the codeword-flip symmetry (check updates depend on products of message
signs), so the error statistics do not depend on the transmitted codeword.

Divergence (a non-finite loss, gradient or parameter) ends a run and is
reported, never raised.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import bp, channel, hyperdec
from .autodiff import ParameterStore
from .tanner import TannerGraph

NORMALIZATIONS = ("bit", "frame", "none")


@dataclass(frozen=True)
class TrainConfig:
    """Training hyper-parameters; the defaults are untuned starting points."""

    lr: float = 1e-4
    batch_size: int = 120
    steps: int = 1000
    snr_range_db: tuple = (1.0, 8.0)
    seeds: tuple = (0,)
    gradient_clip_norm: float | None = None
    variant: str = "hyper_damped"
    eval_every: int = 0
    iterations: int = 5
    normalization: str = "bit"
    val_frames: int = 2000
    val_snr_db: tuple = (4.0, 6.0)

    def __post_init__(self):
        low, high = self.snr_range_db
        if low > high:
            raise ValueError("snr_range_db must satisfy low <= high")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be >= 1 and steps >= 0")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        object.__setattr__(self, "snr_range_db", tuple(float(v) for v in self.snr_range_db))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "val_snr_db", tuple(float(v) for v in self.val_snr_db))

    def to_dict(self):
        d = asdict(self)
        for key in ("snr_range_db", "seeds", "val_snr_db"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        for key in ("snr_range_db", "seeds", "val_snr_db"):
            if key in known:
                known[key] = tuple(known[key])
        return cls(**known)


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)
    diverged: bool = False
    diverged_at: int | None = None
    final_damping: float | None = None
    wall_clock: float = 0.0
    val_trace: list = field(default_factory=list)  # (step, validation BER)
    best_step: int = 0
    best_val: float | None = None
    seed: int = 0

    def summary(self) -> dict:
        return {"steps_recorded": len(self.losses), "diverged": self.diverged,
                "diverged_at": self.diverged_at, "final_damping": self.final_damping,
                "final_loss": self.losses[-1] if self.losses else None,
                "best_step": self.best_step, "best_val_ber": self.best_val,
                "wall_clock_s": round(self.wall_clock, 3), "seed": self.seed}

    def write(self, csv_path, json_path=None):
        csv_path = Path(csv_path)
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss"])
            for i, v in enumerate(self.losses):
                w.writerow([i, repr(float(v))])
        if json_path is not None:
            Path(json_path).write_text(json.dumps(self.summary(), indent=2) + "\n")


def make_batch(graph_or_code, batch_size: int, snr_range_db, rng: np.random.Generator):
    """All-zero codeword frames, Eb/N0 uniform in the range per frame.

    Returns (llr (B, n), targets (B, n) of zeros, per-frame Eb/N0).
    """
    code = getattr(graph_or_code, "code", graph_or_code)
    low, high = snr_range_db
    snr = rng.uniform(low, high, size=batch_size)
    sigma = channel.sigma_from_ebn0(snr, code.code_rate)
    x = channel.modulate(np.zeros((batch_size, code.num_vars)))
    y = x + sigma[:, None] * rng.standard_normal(x.shape)
    return channel.llr(y, sigma), np.zeros((batch_size, code.num_vars)), snr


def multiloss(marginals, targets, normalization: str = "bit") -> ad.Value:
    """Sum over iterations of BCE(sigmoid(-o), target), normalized per bit/frame/none."""
    if not marginals:
        raise ValueError("need at least one iteration of marginals")
    targets = np.asarray(targets, dtype=float)
    total = None
    for o in marginals:
        bce = targets * ad.softplus(o) + (1.0 - targets) * ad.softplus(-o)
        s = ad.sum_op(bce)
        total = s if total is None else total + s
    shape = marginals[0].shape
    if normalization == "bit":
        return total * (1.0 / float(np.prod(shape)))
    if normalization == "frame":
        return total * (1.0 / float(np.prod(shape[:-1]) or 1))
    if normalization == "none":
        return total
    raise ValueError(f"normalization must be one of {NORMALIZATIONS}")


# --- models ------------------------------------------------------------------

class DecoderModel:
    """Common validation for the decoders: BER on a fixed all-zero frame set."""

    graph: TannerGraph
    store: ParameterStore

    def validation_set(self, config: TrainConfig, seed: int):
        rng = np.random.default_rng([seed, 7919])
        per = max(1, config.val_frames // max(1, len(config.val_snr_db)))
        llrs = []
        for snr in config.val_snr_db:
            llr, _, _ = make_batch(self.graph, per, (snr, snr), rng)
            llrs.append(llr)
        return np.concatenate(llrs)

    def validation_error(self, val_llr) -> float:
        return float(self.decode(val_llr).bits.mean())

    def sample(self, config: TrainConfig, rng):
        llr, targets, _ = make_batch(self.graph, config.batch_size, config.snr_range_db, rng)
        return llr, targets


class WeightedBPModel(DecoderModel):
    """BP with one learned weight per edge on the variable-node sums, initialized to 1."""

    def __init__(self, graph: TannerGraph, iterations: int = 5, check_update="exact", q=None):
        self.graph = graph
        self.config = bp.DecodeConfig(iterations=iterations, check_update=check_update, q=q,
                                      variant="weighted")
        self.store = ParameterStore()
        self.store.add("w", np.ones(graph.num_edges))

    def loss(self, tape, params, batch, normalization="bit"):
        llr, targets = batch
        marg = bp.unroll(self.graph, tape.const(llr), self.config, weights=params["w"])
        return multiloss(marg, targets, normalization)

    def decode(self, llr):
        return bp.decode(self.graph, llr, self.config, weights=self.store["w"])

    def meta(self):
        return {"kind": "weighted", "iterations": self.config.iterations,
                "check_update": self.config.check_update, "q": self.config.q,
                "code": self.graph.code.name}


class HyperModel(DecoderModel):
    def __init__(self, dec: hyperdec.HyperDecoder, iterations: int = 5, damped: bool = True):
        self.dec = dec
        self.graph = dec.graph
        self.store = dec.store
        self.iterations = iterations
        self.damped = damped

    def loss(self, tape, params, batch, normalization="bit"):
        llr, targets = batch
        marg = hyperdec.hyper_unroll(self.dec, tape.const(llr), self.iterations, self.damped,
                                     params)
        return multiloss(marg, targets, normalization)

    def decode(self, llr):
        return hyperdec.hyper_decode(self.dec, llr, self.iterations, self.damped)

    def meta(self):
        meta = hyperdec.decoder_meta(self.dec)
        meta.update({"damped": self.damped, "iterations": self.iterations,
                     "variant": "hyper_damped" if self.damped else "hyper"})
        return meta


def damping_of(store: ParameterStore):
    return float(store["damping"]) if "damping" in store else None


def train(model, config: TrainConfig, seed: int | None = None, checkpoint=None,
          progress=None) -> TrainReport:
    """Adam on ``model.store``; the store ends at the best-validation parameters.

    With ``eval_every`` > 0 a fixed validation set is decoded every
    ``eval_every`` steps (and at step 0) and the lowest-BER parameters are kept;
    otherwise the final parameters are kept. Any non-finite loss, gradient or
    parameter stops the run with ``diverged`` set.
    """
    seed = config.seeds[0] if seed is None else seed
    store = model.store
    report = TrainReport(seed=seed)
    start = time.perf_counter()
    val_llr = None
    best = store.copy()
    if config.eval_every > 0:
        val_llr = model.validation_set(config, seed)
        report.best_val = model.validation_error(val_llr)
        report.val_trace.append((0, report.best_val))
    for step in range(config.steps):
        rng = np.random.default_rng([seed, step])
        batch = model.sample(config, rng)
        tape = ad.Tape()
        leaves = store.leaves(tape)
        loss = model.loss(tape, leaves, batch, config.normalization)
        value = loss.item()
        report.losses.append(value)
        if not math.isfinite(value):
            report.diverged, report.diverged_at = True, step
            break
        grads = tape.gradients(loss, leaves)
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            report.diverged, report.diverged_at = True, step
            break
        ad.clip_grad_norm(grads, config.gradient_clip_norm)
        ad.adam_step(store, grads, config.lr)
        if not store.is_finite():
            report.diverged, report.diverged_at = True, step
            break
        if progress is not None:
            progress(step, value)
        if val_llr is not None and (step + 1) % config.eval_every == 0:
            val = model.validation_error(val_llr)
            report.val_trace.append((step + 1, val))
            if val <= report.best_val:
                report.best_val, report.best_step = val, step + 1
                best = store.copy()
    if val_llr is not None or report.diverged:
        # restore the best finite parameters (initial ones if nothing better was seen)
        store.params.update({k: v.copy() for k, v in best.params.items()})
    report.final_damping = damping_of(store)
    report.wall_clock = time.perf_counter() - start
    if checkpoint is not None:
        meta = dict(model.meta(), train=config.to_dict(), seed=seed,
                    gaussian_method=channel.GAUSSIAN_METHOD)
        ad.save_checkpoint(checkpoint, store, meta)
    return report
