"""Monte-Carlo BER sweeps, paired decoder comparisons, stability runs and the gradient suite.

Frames are simulated in fixed-size chunks. Chunk ``i`` of SNR point ``j``
always draws its codewords and noise from ``default_rng([seed, j, i])``, so
every decoder sees the same channel realizations (common random numbers) and
results do not depend on the worker count. Workers evaluate chunks ahead of
time; the stopping rule is applied in chunk order and surplus chunks are
discarded, so the BER estimator uses exactly the frames it counts.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import autodiff as ad
from . import bp, channel, codes, gnn, hyperdec, tanner, training

DECODER_VARIANTS = ("uncoded", "bp", "weighted", "hyper", "hyper_damped")
LEARNED = ("weighted", "hyper", "hyper_damped")
CSV_COLUMNS = ("variant", "snr_db", "frames", "bit_errors", "frame_errors", "ber", "fer", "ci95")


def worker_count() -> int:
    raw = os.environ.get("HYPERMSG_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"HYPERMSG_THREADS must be an integer, got {raw!r}") from exc
    return max(1, n)


@dataclass(frozen=True)
class DecoderSpec:
    """One column of a sweep: a decoder variant, its check rule and, if learned, a checkpoint."""

    variant: str
    check_update: str = "exact"
    q: int | None = None
    checkpoint: str | None = None
    iterations: int = 5

    def __post_init__(self):
        if self.variant not in DECODER_VARIANTS:
            raise ValueError(f"variant must be one of {DECODER_VARIANTS}, got {self.variant!r}")
        bp.DecodeConfig(iterations=self.iterations, check_update=self.check_update, q=self.q)
        if self.variant in LEARNED and not self.checkpoint:
            raise ValueError(f"variant {self.variant!r} needs a checkpoint")

    @property
    def label(self) -> str:
        if self.variant == "uncoded" or self.check_update == "exact":
            return self.variant
        return f"{self.variant}-taylor{self.q}"


@dataclass(frozen=True)
class SweepConfig:
    code: str
    variants: tuple = ("uncoded", "bp")
    snr_db: tuple = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0)
    max_frames: int = 100_000
    min_bit_errors: int = 100
    seed: int = 0
    iterations: int = 5
    check_update: str = "exact"
    q: int | None = None
    checkpoints: dict = field(default_factory=dict)
    chunk_frames: int = 1000
    sigma_override: float | None = None   # fixed noise level for every point, e.g. 1e-6

    def __post_init__(self):
        snr = tuple(float(s) for s in self.snr_db)
        if not snr or any(b <= a for a, b in zip(snr, snr[1:])):
            raise ValueError("snr points must be non-empty and strictly increasing")
        if self.min_bit_errors < 1:
            raise ValueError("min_bit_errors must be >= 1")
        if self.max_frames < 1 or self.chunk_frames < 1:
            raise ValueError("max_frames and chunk_frames must be >= 1")
        object.__setattr__(self, "snr_db", snr)
        object.__setattr__(self, "variants", tuple(self.variants))
        object.__setattr__(self, "checkpoints", dict(self.checkpoints))

    def decoder_specs(self):
        specs = []
        for v in self.variants:
            if isinstance(v, DecoderSpec):
                specs.append(v)
            else:
                specs.append(DecoderSpec(v, self.check_update, self.q, self.checkpoints.get(v),
                                         self.iterations))
        return specs

    def to_dict(self):
        d = asdict(self)
        d["variants"] = [asdict(v) if isinstance(v, DecoderSpec) else v for v in self.variants]
        d["snr_db"] = list(self.snr_db)
        return d

    @classmethod
    def from_dict(cls, d):
        d = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "variants" in d:
            d["variants"] = tuple(DecoderSpec(**v) if isinstance(v, dict) else v for v in d["variants"])
        if "snr_db" in d:
            d["snr_db"] = tuple(d["snr_db"])
        return cls(**d)


@dataclass(frozen=True)
class BerPoint:
    snr_db: float
    frames: int
    bit_errors: int
    frame_errors: int
    n: int

    @property
    def ber(self) -> float:
        return self.bit_errors / (self.frames * self.n) if self.frames else float("nan")

    @property
    def fer(self) -> float:
        return self.frame_errors / self.frames if self.frames else float("nan")

    @property
    def ci95(self) -> float:
        """Normal-approximation 95% half-width of the BER estimate."""
        if not self.frames:
            return float("nan")
        p = self.ber
        return 1.96 * math.sqrt(p * (1.0 - p) / (self.frames * self.n))


# --- decoders ----------------------------------------------------------------

def load_decoder(spec: DecoderSpec, graph: tanner.TannerGraph):
    """Callable llr (B, n) -> hard decisions (B, n) for the given spec."""
    if spec.variant == "uncoded":
        return lambda llr: bp.hard_decision(llr)
    if spec.variant == "bp":
        cfg = bp.DecodeConfig(spec.iterations, spec.check_update, spec.q)
        return lambda llr: bp.decode(graph, llr, cfg).bits
    path = Path(spec.checkpoint)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    store, meta = ad.load_checkpoint(path)
    if meta.get("code") != graph.code.name:
        raise ValueError(f"checkpoint {path} was trained on {meta.get('code')!r}, "
                         f"not {graph.code.name!r}")
    if spec.variant == "weighted":
        if meta.get("kind") != "weighted":
            raise ValueError(f"checkpoint {path} does not hold a weighted BP decoder")
        cfg = bp.DecodeConfig(spec.iterations, spec.check_update, spec.q, variant="weighted")
        w = store["w"]
        return lambda llr: bp.decode(graph, llr, cfg, weights=w).bits
    if meta.get("kind") != "hyper":
        raise ValueError(f"checkpoint {path} does not hold a hypernetwork decoder")
    dec = hyperdec.decoder_from_checkpoint(graph, store, meta)
    dec = dec.with_check_update(spec.check_update, spec.q)
    damped = spec.variant == "hyper_damped"
    return lambda llr: hyperdec.hyper_decode(dec, llr, spec.iterations, damped).bits


def simulate_chunk(code: codes.ParityCheckMatrix, generator: np.ndarray, sigma: float, frames: int,
                   rng: np.random.Generator):
    """Random codewords through BPSK/AWGN; returns (codewords, llr)."""
    info = rng.integers(0, 2, size=(frames, generator.shape[0]))
    words = (info @ generator) % 2
    received = channel.transmit(channel.modulate(words), sigma, rng)
    return words.astype(np.uint8), channel.llr(received, sigma)


def _chunks(code, generator, sigma, seed, point, chunk_frames, max_frames):
    start, i = 0, 0
    while start < max_frames:
        size = min(chunk_frames, max_frames - start)
        yield i, size, np.random.default_rng([seed, point, i])
        start += size
        i += 1


def _point_sigma(config: SweepConfig, snr: float, rate) -> float:
    if config.sigma_override is not None:
        return float(config.sigma_override)
    return float(channel.sigma_from_ebn0(snr, rate))


def _run_chunks(jobs, work, workers, stop):
    """Evaluate ``work`` on jobs in order with look-ahead; stop once ``stop(result)`` says so."""
    jobs = iter(jobs)
    if workers == 1:
        for job in jobs:
            if stop(work(job)):
                return
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        while True:
            batch = [job for _, job in zip(range(workers), jobs)]
            if not batch:
                return
            for result in pool.map(work, batch):
                if stop(result):
                    return


def run_sweep(config: SweepConfig, progress=None) -> dict:
    """BER table per decoder label: {label: [BerPoint per SNR]}."""
    code = codes.get_code(config.code)
    graph = tanner.build(code)
    generator = codes.gf2_nullspace(code.entries)
    specs = config.decoder_specs()
    decoders = {s.label: load_decoder(s, graph) for s in specs}
    if len(decoders) != len(specs):
        raise ValueError("decoder labels must be distinct")
    workers = worker_count()
    table = {label: [] for label in decoders}
    for j, snr in enumerate(config.snr_db):
        sigma = _point_sigma(config, snr, code.code_rate)
        counts = {label: [0, 0, 0] for label in decoders}     # frames, bit errors, frame errors
        active = set(decoders)

        def work(job):
            i, size, rng = job
            words, llr = simulate_chunk(code, generator, sigma, size, rng)
            out = {}
            for label in list(active):
                errs = (decoders[label](llr) != words).sum(axis=1)
                out[label] = (size, int(errs.sum()), int(np.count_nonzero(errs)))
            return out

        def stop(result):
            for label, (size, bits, frames) in result.items():
                if label not in active:
                    continue
                c = counts[label]
                c[0] += size
                c[1] += bits
                c[2] += frames
                if c[1] >= config.min_bit_errors:
                    active.discard(label)
            return not active

        _run_chunks(_chunks(code, generator, sigma, config.seed, j, config.chunk_frames,
                            config.max_frames), work, workers, stop)
        for label, (frames, bits, ferr) in counts.items():
            table[label].append(BerPoint(snr, frames, bits, ferr, code.num_vars))
        if progress is not None:
            progress(snr, {label: table[label][-1] for label in table})
    return table


def write_sweep_csv(path, config: SweepConfig, table: dict):
    """CSV whose first line is ``# config <json>``; columns suit gnuplot's ``using``."""
    buf = io.StringIO()
    header = dict(config.to_dict(), gaussian_method=channel.GAUSSIAN_METHOD)
    buf.write("# config " + json.dumps(header, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for label, points in table.items():
        for p in points:
            w.writerow([label, repr(p.snr_db), p.frames, p.bit_errors, p.frame_errors,
                        repr(p.ber), repr(p.fer), repr(p.ci95)])
    Path(path).write_text(buf.getvalue())


def read_sweep_csv(path):
    """(SweepConfig, rows as dicts) from a CSV written by ``write_sweep_csv``."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# config "):
        raise ValueError(f"{path} has no embedded config header")
    config = SweepConfig.from_dict(json.loads(lines[0][len("# config "):]))
    rows = list(csv.DictReader(lines[1:]))
    return config, rows


def rerun_from_csv(path) -> dict:
    config, _ = read_sweep_csv(path)
    return run_sweep(config)


# --- paired comparison -------------------------------------------------------

@dataclass(frozen=True)
class ComparePoint:
    snr_db: float
    frames: int
    errors_a: int
    errors_b: int
    a_better: int        # frames where A made fewer bit errors
    b_better: int
    agreement: float     # fraction of identical hard decisions
    n: int
    diff_var: float = 0.0  # sample variance of per-frame error-count differences

    @property
    def ber_a(self) -> float:
        return self.errors_a / (self.frames * self.n)

    @property
    def ber_b(self) -> float:
        return self.errors_b / (self.frames * self.n)

    @property
    def delta(self) -> float:
        """BER(A) - BER(B)."""
        return self.ber_a - self.ber_b

    @property
    def ratio(self) -> float:
        """BER(A) / BER(B); nan when B made no errors."""
        return self.ber_a / self.ber_b if self.errors_b else float("nan")

    def sign_test(self, alternative: str = "two-sided") -> float:
        """p-value of the sign test on per-frame error counts (ties dropped).

        ``alternative="greater"`` tests whether A is worse than B more often than not.
        """
        trials = self.a_better + self.b_better
        if trials == 0:
            return 1.0
        return float(stats.binomtest(self.b_better, trials, 0.5, alternative=alternative).pvalue)

    @property
    def ci95_delta(self) -> float:
        """Normal-approximation 95% half-width of the paired BER difference."""
        if self.frames < 2:
            return float("nan")
        return 1.96 * math.sqrt(self.diff_var / self.frames) / self.n


def compare(a: DecoderSpec, b: DecoderSpec, config: SweepConfig) -> list:
    """Paired simulation of two decoders on identical frames at each SNR point.

    Each point runs until both decoders have ``min_bit_errors`` errors or
    ``max_frames`` frames have been simulated.
    """
    code = codes.get_code(config.code)
    graph = tanner.build(code)
    dec_a, dec_b = load_decoder(a, graph), load_decoder(b, graph)
    generator = codes.gf2_nullspace(code.entries)
    workers = worker_count()
    out = []
    for j, snr in enumerate(config.snr_db):
        sigma = _point_sigma(config, snr, code.code_rate)
        acc = {"frames": 0, "ea": 0, "eb": 0, "ab": 0, "bb": 0, "agree": 0, "d1": 0.0, "d2": 0.0}

        def work(job):
            i, size, rng = job
            words, llr = simulate_chunk(code, generator, sigma, size, rng)
            bits_a, bits_b = dec_a(llr), dec_b(llr)
            ea = (bits_a != words).sum(axis=1)
            eb = (bits_b != words).sum(axis=1)
            d = (ea - eb).astype(float)
            return (size, int(ea.sum()), int(eb.sum()), int((ea < eb).sum()), int((eb < ea).sum()),
                    int((bits_a == bits_b).sum()), float(d.sum()), float((d * d).sum()))

        def stop(r):
            for key, val in zip(("frames", "ea", "eb", "ab", "bb", "agree", "d1", "d2"), r):
                acc[key] += val
            return min(acc["ea"], acc["eb"]) >= config.min_bit_errors

        _run_chunks(_chunks(code, generator, sigma, config.seed, j, config.chunk_frames,
                            config.max_frames), work, workers, stop)
        f = acc["frames"]
        var = (acc["d2"] - acc["d1"] ** 2 / f) / (f - 1) if f > 1 else 0.0
        out.append(ComparePoint(snr, f, acc["ea"], acc["eb"], acc["ab"], acc["bb"],
                                acc["agree"] / (f * code.num_vars), code.num_vars, max(var, 0.0)))
    return out


def write_compare_csv(path, a: DecoderSpec, b: DecoderSpec, config: SweepConfig, points):
    buf = io.StringIO()
    header = {"a": asdict(a), "b": asdict(b), "sweep": config.to_dict(),
              "gaussian_method": channel.GAUSSIAN_METHOD}
    buf.write("# config " + json.dumps(header, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["snr_db", "frames", "ber_a", "ber_b", "delta", "ci95_delta", "ratio",
                "a_better", "b_better", "p_two_sided", "agreement"])
    for p in points:
        w.writerow([repr(p.snr_db), p.frames, repr(p.ber_a), repr(p.ber_b), repr(p.delta),
                    repr(p.ci95_delta), repr(p.ratio), p.a_better, p.b_better,
                    repr(p.sign_test()), repr(p.agreement)])
    Path(path).write_text(buf.getvalue())


# --- stability ---------------------------------------------------------------

@dataclass
class StabilityResult:
    damped: bool
    reports: list

    @property
    def divergences(self) -> int:
        return sum(r.diverged for r in self.reports)


def stability_experiment(code_ref: str, damped: bool, train_config: training.TrainConfig,
                         hyper_config: hyperdec.HyperConfig = hyperdec.HyperConfig(),
                         iterations: int = 5) -> StabilityResult:
    """Train one fresh hyper decoder per seed and count divergent runs."""
    graph = tanner.build(codes.get_code(code_ref))
    reports = []
    for seed in train_config.seeds:
        dec = hyperdec.new_decoder(graph, hyper_config, seed=seed)
        model = training.HyperModel(dec, iterations, damped)
        reports.append(training.train(model, train_config, seed=seed))
    return StabilityResult(damped, reports)


# --- gradient checks ---------------------------------------------------------

@dataclass(frozen=True)
class GradCheckResult:
    name: str
    max_rel_error: float   # over probes with |finite difference| > 1e-6
    max_abs_error: float
    passed: bool


def _fd_compare(fn, params: dict, rng, h=1e-5, rtol=1e-4, atol=1e-7, probes=6):
    """Compare reverse-mode gradients of ``fn(tape, leaves)`` with central differences.

    A probe passes when |analytic - fd| <= atol + rtol * |fd|.
    """
    params = {k: np.array(v, dtype=float) for k, v in params.items()}
    tape = ad.Tape()
    leaves = {k: tape.param(v, k) for k, v in params.items()}
    loss = fn(tape, leaves)
    grads = tape.gradients(loss, leaves)
    worst_rel = worst_abs = 0.0
    ok = True
    for name, value in params.items():
        flat = value.reshape(-1)
        for idx in rng.choice(flat.size, size=min(probes, flat.size), replace=False):
            def at(delta):
                p = {k: v.copy() for k, v in params.items()}
                p[name].reshape(-1)[idx] += delta
                t = ad.Tape(record=False)
                return fn(t, {k: t.const(v) for k, v in p.items()}).item()
            fd = (at(h) - at(-h)) / (2 * h)
            an = float(grads[name].reshape(-1)[idx])
            err = abs(an - fd)
            worst_abs = max(worst_abs, err)
            if abs(fd) > 1e-6:
                worst_rel = max(worst_rel, err / abs(fd))
            ok &= err <= atol + rtol * abs(fd)
    return worst_rel, worst_abs, bool(ok)


def _random_case(i: int, rng):
    """One randomly drawn differentiable configuration; returns (name, fn, params)."""
    kind = i % 5
    code = ["repetition-3", "hamming-7-4", "bch-15-7"][rng.integers(3)]
    graph = tanner.build(codes.get_code(code))
    llr = rng.normal(2.0, 1.5, size=(int(rng.integers(1, 4)), graph.num_vars))
    if kind in (0, 1):
        damped = kind == 1
        cu = ["exact", "taylor"][rng.integers(2)]
        q = int(rng.integers(1, 6)) if cu == "taylor" else None
        cfg = hyperdec.HyperConfig(f_hidden=(4, 4), g_hidden=(3,), check_update=cu, q=q,
                                   theta_mode=["per_edge", "shared"][rng.integers(2)],
                                   init="random")
        dec = hyperdec.new_decoder(graph, cfg, seed=int(rng.integers(1 << 30)),
                                   damping=float(rng.uniform(0.1, 0.9)))
        iters = int(rng.integers(1, 4))

        def fn(tape, p):
            marg = hyperdec.hyper_unroll(dec, tape.const(llr), iters, damped, p)
            return training.multiloss(marg, np.zeros_like(llr))
        name = f"hyper{'_damped' if damped else ''}/{code}/{cu}{q or ''}/{cfg.theta_mode}"
        return name, fn, {k: v.copy() for k, v in dec.store.params.items()}
    if kind == 2:
        cu = ["exact", "taylor"][rng.integers(2)]
        q = int(rng.integers(1, 6)) if cu == "taylor" else None
        cfg = bp.DecodeConfig(int(rng.integers(1, 4)), cu, q, variant="weighted")

        def fn(tape, p):
            return training.multiloss(bp.unroll(graph, tape.const(llr), cfg, p["w"]),
                                      np.zeros_like(llr))
        return f"weighted/{code}/{cu}{q or ''}", fn, {"w": rng.uniform(0.5, 1.5, graph.num_edges)}
    if kind == 3:
        q = int(rng.integers(1, 8))
        spec = ad.MlpSpec.uniform((3, 4, 2), last="linear", bias=True)

        def fn(tape, p):
            x = ad.tanh_op(ad.affine(spec, p["theta"], tape.const(llr[:, :3] * 0.3)))
            y = ad.taylor_arctanh_op(x * 0.9, q) + ad.abs_val(x)
            return ad.sum_op(ad.square(ad.prod_last(y)))
        return f"mlp-taylor{q}-abs-prod", fn, {"theta": spec.init(rng)}
    gcfg = gnn.GinConfig(hidden=4, iterations=int(rng.integers(1, 4)),
                         kind=["hyper", "gin"][rng.integers(2)], f_hidden=(4, 4, 4), g_hidden=(3, 3),
                         head_hidden=4)
    model = gnn.new_model(gcfg, seed=int(rng.integers(1 << 30)),
                          damping=float(rng.uniform(0.1, 0.9)))
    model.store.params.update({k: v + rng.normal(0, 0.1, np.shape(v))
                               for k, v in model.store.params.items() if k.startswith("eps")})
    graphs, _ = gnn.make_synthetic_dataset("density-pair", (4, 5), seed=int(rng.integers(1000)),
                                           per_size=1, test_fraction=0.0)
    batch = gnn.GraphBatch.of(graphs)
    clf = gnn.GinClassifier(model, graphs)

    def fn(tape, p):
        return clf.loss(tape, p, batch)
    return f"gnn-{gcfg.kind}/K{gcfg.iterations}", fn, {k: v.copy() for k, v in model.store.params.items()}


def gradcheck_suite(count: int = 100, seed: int = 0, rtol: float = 1e-4, h: float = 1e-5):
    """Reverse-mode gradients against central differences on ``count`` random configurations."""
    rng = np.random.default_rng(seed)
    results = []
    for i in range(count):
        name, fn, params = _random_case(i, rng)
        rel, abs_err, ok = _fd_compare(fn, params, rng, h=h, rtol=rtol)
        results.append(GradCheckResult(f"{i:03d}:{name}", rel, abs_err, ok))
    return results


def with_seed(config: SweepConfig, seed: int) -> SweepConfig:
    return replace(config, seed=seed)
