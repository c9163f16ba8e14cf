"""Command line entry point: ``hypermsg <command> [options]``.

Config files are TOML (``.toml``) or JSON (anything else). Flags given on the
command line override the corresponding config keys.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import autodiff as ad
from . import codes, gnn, harness, hyperdec, tanner, training

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class CliError(Exception):
    pass


def load_config(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise CliError(f"config file not found: {path}")
    text = path.read_text()
    try:
        if path.suffix == ".toml":
            return tomllib.loads(text)
        return json.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot parse config {path}: {exc}") from exc


def _sweep_config(cfg: dict, args) -> harness.SweepConfig:
    cfg = dict(cfg)
    if args.code:
        cfg["code"] = args.code
    if args.variants:
        cfg["variants"] = args.variants.split(",")
    if args.snr:
        cfg["snr_db"] = [float(s) for s in args.snr.split(",")]
    if args.seed is not None:
        cfg["seed"] = args.seed
    if "code" not in cfg:
        raise CliError("a code is required (config key 'code' or --code)")
    return harness.SweepConfig.from_dict(cfg)


def cmd_codes_list(args) -> int:
    print(f"{'key':<24}{'name':<38}{'n':>5}{'k':>5}{'m':>5}{'edges':>7}")
    for key, (_, label) in codes.BUNDLED.items():
        code = codes.get_code(key)
        print(f"{key:<24}{label:<38}{code.num_vars:>5}{code.k:>5}{code.num_checks:>5}"
              f"{int(code.entries.sum()):>7}")
    return 0


def cmd_sweep(args) -> int:
    if args.rerun:
        config, _ = harness.read_sweep_csv(args.rerun)
    else:
        config = _sweep_config(load_config(args.config), args)

    def progress(snr, points):
        cols = "  ".join(f"{k}={p.ber:.3e}" for k, p in points.items())
        print(f"{snr:6.2f} dB  {cols}", file=sys.stderr)

    table = harness.run_sweep(config, progress=progress)
    if args.out:
        harness.write_sweep_csv(args.out, config, table)
    else:
        for label, points in table.items():
            for p in points:
                print(f"{label},{p.snr_db},{p.frames},{p.bit_errors},{p.ber:.6e},{p.ci95:.2e}")
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    try:
        a = harness.DecoderSpec(**cfg.pop("a"))
        b = harness.DecoderSpec(**cfg.pop("b"))
    except KeyError as exc:
        raise CliError("compare config needs tables 'a' and 'b'") from exc
    cfg.setdefault("variants", [])
    config = _sweep_config(cfg, args)
    points = harness.compare(a, b, config)
    print(f"{'snr':>6} {'frames':>8} {'ber_a':>11} {'ber_b':>11} {'ratio':>7} {'p':>8} {'agree':>7}")
    for p in points:
        print(f"{p.snr_db:6.2f} {p.frames:8d} {p.ber_a:11.3e} {p.ber_b:11.3e} {p.ratio:7.3f} "
              f"{p.sign_test():8.2e} {p.agreement:7.4f}")
    if args.out:
        harness.write_compare_csv(args.out, a, b, config, points)
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    code_ref = args.code or cfg.get("code")
    if not code_ref:
        raise CliError("a code is required (config key 'code' or --code)")
    variant = cfg.get("variant", "hyper_damped")
    tcfg = training.TrainConfig.from_dict(dict(cfg.get("train", {}), variant=variant))
    seed = args.seed if args.seed is not None else tcfg.seeds[0]
    graph = tanner.build(codes.get_code(code_ref))
    iterations = tcfg.iterations
    if variant == "weighted":
        model = training.WeightedBPModel(graph, iterations, cfg.get("check_update", "exact"),
                                         cfg.get("q"))
    elif variant in ("hyper", "hyper_damped"):
        hcfg = hyperdec.HyperConfig.from_dict(cfg.get("hyper", {}))
        dec = hyperdec.new_decoder(graph, hcfg, seed=seed, damping=cfg.get("damping"))
        model = training.HyperModel(dec, iterations, damped=variant == "hyper_damped")
    else:
        raise CliError(f"cannot train variant {variant!r}; use weighted, hyper or hyper_damped")
    out = Path(args.out or f"{variant}-{code_ref}-seed{seed}.npz")
    report = training.train(model, tcfg, seed=seed, checkpoint=out)
    report.write(out.with_suffix(".loss.csv"), out.with_suffix(".json"))
    print(json.dumps(report.summary(), indent=2))
    return 0


def cmd_gradcheck(args) -> int:
    results = harness.gradcheck_suite(args.count, seed=args.seed)
    failed = [r for r in results if not r.passed]
    for r in failed:
        print(f"FAIL {r.name}: relative error {r.max_rel_error:.2e}, "
              f"absolute error {r.max_abs_error:.2e}")
    rel = max(r.max_rel_error for r in results)
    abs_err = max(r.max_abs_error for r in results)
    print(f"{len(results) - len(failed)}/{len(results)} passed, worst relative error {rel:.2e}, "
          f"worst absolute error {abs_err:.2e}")
    return 0 if not failed else 1


def _gin_data(cfg: dict, seed: int):
    data = cfg.get("data", {})
    family = data.get("family", "cycle-vs-path")
    sizes = list(data.get("sizes", range(6, 13)))
    per_size = data.get("per_size", 20)
    split = gnn.make_synthetic_dataset(family, sizes, seed=seed, per_size=per_size)
    return family, sizes, per_size, split


def cmd_gin_train(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    family, sizes, per_size, (train_set, test_set) = _gin_data(cfg, seed)
    model = gnn.new_model(gnn.GinConfig.from_dict(cfg.get("model", {})), seed=seed)
    tcfg = gnn.default_train_config(**cfg.get("train", {}))
    clf = gnn.GinClassifier(model, train_set)
    out = Path(args.out or f"gin-{family}-seed{seed}.npz")
    report = training.train(clf, tcfg, seed=seed)
    meta = dict(clf.meta(), data={"family": family, "sizes": sizes, "per_size": per_size,
                                  "seed": seed}, train=tcfg.to_dict())
    ad.save_checkpoint(out, model.store, meta)
    report.write(out.with_suffix(".loss.csv"), out.with_suffix(".json"))
    print(f"train accuracy {gnn.accuracy(model, train_set):.4f}  "
          f"test accuracy {gnn.accuracy(model, test_set):.4f}  "
          f"damping {model.damping if 'damping' in model.store else float('nan'):.3f}")
    return 0


def cmd_gin_eval(args) -> int:
    path = Path(args.checkpoint)
    if not path.is_file():
        raise CliError(f"checkpoint not found: {path}")
    store, meta = ad.load_checkpoint(path)
    model = gnn.model_from_checkpoint(store, meta)
    if args.data:
        graphs = gnn.load_graphs(args.data)
    else:
        d = meta["data"]
        _, graphs = gnn.make_synthetic_dataset(d["family"], d["sizes"], seed=d["seed"],
                                               per_size=d["per_size"])
    print(f"accuracy {gnn.accuracy(model, graphs):.4f} on {len(graphs)} graphs")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypermsg",
                                     description="Hypernetwork message passing workbench.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="TOML or JSON config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help=out_help)

    p = sub.add_parser("codes", help="bundled parity-check matrices")
    csub = p.add_subparsers(dest="codes_command", required=True)
    csub.add_parser("list", help="table of bundled codes").set_defaults(func=cmd_codes_list)

    p = sub.add_parser("sweep", help="BER/SNR sweep")
    common(p, "CSV output path (config echoed in its header)")
    p.add_argument("--code", help="bundled code key or alist path")
    p.add_argument("--variants", help="comma-separated decoder variants")
    p.add_argument("--snr", help="comma-separated Eb/N0 points in dB")
    p.add_argument("--rerun", metavar="CSV", help="repeat the sweep described in a CSV header")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="paired comparison of two decoders")
    common(p, "CSV output path")
    p.add_argument("--code", help="bundled code key or alist path")
    p.add_argument("--snr", help="comma-separated Eb/N0 points in dB")
    p.set_defaults(func=cmd_compare, variants=None)

    p = sub.add_parser("train", help="train a weighted or hypernetwork decoder")
    common(p, "checkpoint path (.npz)")
    p.add_argument("--code", help="bundled code key or alist path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck", help="reverse-mode vs finite-difference gradient suite")
    p.add_argument("--count", type=int, default=100, help="number of random configurations")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gin-train", help="train a GIN or hyper-GIN graph classifier")
    common(p, "checkpoint path (.npz)")
    p.set_defaults(func=cmd_gin_train)

    p = sub.add_parser("gin-eval", help="accuracy of a GIN checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--data", help="graph dataset file; default: the checkpoint's test split")
    p.set_defaults(func=cmd_gin_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, KeyError, FileNotFoundError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"hypermsg: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
