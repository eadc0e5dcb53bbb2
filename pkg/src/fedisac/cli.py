"""Command-line interface.

Every subcommand reads an optional JSON experiment spec (``--config``) and
applies ``--set key.path=value`` overrides (values parsed as JSON when
possible).  Failures print one JSON line ``{"error": ..., "message": ...}`` to
stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import beamnet, federate, harness, metrics
from .channel import NetworkConfig, generate_dataset, read_dataset_header, save_dataset

EXIT_ERROR = 2
DEFAULT_PRUNE_FACTORS = (0.0, 0.2, 0.4, 0.5, 0.6, 0.8)
PAPER_SCALE = {"n_train": 20000, "n_test": 2000}


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("usage", message)


def _fail(kind: str, message: str):
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    sys.exit(EXIT_ERROR)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(d: dict, sets: list) -> dict:
    for item in sets or []:
        if "=" not in item:
            raise CliError(f"override {item!r} is not key=value")
        key, val = item.split("=", 1)
        parts = key.split(".")
        node = d
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = _parse_value(val)
    return d


def load_spec(args) -> harness.ExperimentSpec:
    d = {}
    if args.config:
        try:
            with open(args.config) as f:
                d = json.load(f)
        except json.JSONDecodeError as e:
            raise CliError(f"malformed config {args.config}: {e}") from e
    if getattr(args, "paper_scale", False):
        d.update(PAPER_SCALE)
    d = apply_overrides(d, args.set)
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "out_dir", None):
        d["out_dir"] = args.out_dir
    return harness.ExperimentSpec.from_dict(d)


# ---------------------------------------------------------------------------
# model directories
# ---------------------------------------------------------------------------

def save_trained(tr: harness.Trained, cfg: NetworkConfig, path) -> None:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    n = 1 if tr.method == "HFL" else len(tr.models)
    for m in range(n):
        beamnet.save_model(tr.models[m], d / f"bs{m}.fmd")
    manifest = {"method": tr.method, "per_cell": tr.per_cell, "n_models": n,
                "scenario": cfg.to_dict(), "ledger": tr.ledger}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_trained(path) -> tuple[harness.Trained, NetworkConfig]:
    d = Path(path)
    if not (d / "manifest.json").is_file():
        raise CliError(f"no trained model at {path}")
    man = json.loads((d / "manifest.json").read_text())
    cfg = NetworkConfig.from_dict(man["scenario"])
    models = [beamnet.load_model(d / f"bs{m}.fmd") for m in range(man["n_models"])]
    if man["n_models"] == 1:
        models = models * cfg.M
    return harness.Trained(man["method"], models, man["per_cell"], man["ledger"]), cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    spec = load_spec(args)
    n = args.n or spec.n_train
    ds = generate_dataset(spec.scenario, n, spec.seed)
    save_dataset(ds, args.out)
    print(json.dumps(read_dataset_header(args.out), sort_keys=True))


def _point(spec):
    v = spec.values[0] if spec.axis in ("snr_db", "n_t", "rho") else None
    return harness.point_config(spec, v)


def cmd_train(args):
    spec = load_spec(args)
    cfg, rho = _point(spec)
    train_ds, _ = harness.datasets(spec, cfg)
    log_path = Path(args.out) / "train_log.csv"
    Path(args.out).mkdir(parents=True, exist_ok=True)
    tr = harness.train_method(args.method, train_ds, spec.train, rho, spec.alpha, spec.beta, log_path)
    save_trained(tr, cfg, args.out)
    print(json.dumps({"method": tr.method, "out": str(args.out), **tr.ledger}, sort_keys=True))


def cmd_eval(args):
    spec = load_spec(args)
    tr, cfg = load_trained(args.models)
    _, test = harness.datasets(harness.ExperimentSpec.from_dict({**spec.to_dict(),
                                                                 "scenario": cfg.to_dict()}), cfg)
    if args.prune:
        tr = tr.pruned(args.prune)
    ev = metrics.evaluate(test.H, test.G, tr.beams(test.H, test.G, cfg), cfg)
    print(json.dumps({"method": tr.method, **ev}, sort_keys=True))


def cmd_sweep(args):
    spec = load_spec(args)
    out = harness.run_experiment(spec)
    if not spec.out_dir:
        sys.stdout.write(harness.rows_to_csv(out["rows"]))


def cmd_beampattern(args):
    spec = load_spec(args)
    tr, cfg = load_trained(args.models)
    sp = harness.ExperimentSpec.from_dict({**spec.to_dict(), "scenario": cfg.to_dict()})
    _, test = harness.datasets(sp, cfg)
    W = tr.beams(test.H[:spec.beampattern_samples], test.G[:spec.beampattern_samples], cfg)
    harness.write_beampattern(args.out, harness.beampattern_table(W[:, args.bs]))
    print(json.dumps({"out": str(args.out)}))


def cmd_prune_study(args):
    spec = load_spec(args)
    if args.factors or spec.axis != "prune_factor":
        spec.sweep = {"prune_factor": args.factors or list(DEFAULT_PRUNE_FACTORS)}
    spec.validate()
    out = harness.run_experiment(spec)
    if not spec.out_dir:
        sys.stdout.write(harness.rows_to_csv(out["rows"]))


def cmd_overhead_report(args):
    spec = load_spec(args)
    c = spec.scenario
    M, K, n_t = args.M or c.M, args.K or c.K, args.n_t or c.n_t
    tab = federate.overhead_table(M, K, n_t, args.T, args.B)
    cfg = c.replace(M=M, K=K, n_t=n_t)
    hidden = spec.train.hidden
    report = {
        "inputs": {"M": M, "K": K, "N_T": n_t, "T": args.T, "B": args.B},
        "formulas": {
            "wmmse_deploy_complex": "M^2 K N_T",
            "vfl_train_complex": "(M^2 + M) T K N_T",
            "hfl_train_bits": "2 M B T",
        },
        "values": tab,
        "flops": {p: federate.estimate_complexity(cfg, hidden, p) for p in ("forward", "training", "wmmse")},
        "hfl_rounds_note": federate.rounds_bound_note(),
    }
    print(json.dumps(report, indent=2, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fedisac", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment spec")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a spec field, e.g. scenario.n_t=16")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--paper-scale", action="store_true",
                        help="use 20,000 train / 2,000 test samples instead of the desk-scale sizes")
        return sp

    sp = common(sub.add_parser("gen-data", help="generate and save a channel dataset"))
    sp.add_argument("--n", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_gen_data)

    sp = common(sub.add_parser("train", help="train one learned method at the first sweep value"))
    sp.add_argument("--method", required=True, choices=list(harness.LEARNED))
    sp.add_argument("--out", required=True, help="model directory")
    sp.set_defaults(fn=cmd_train)

    sp = common(sub.add_parser("eval", help="evaluate a trained model directory on the test set"))
    sp.add_argument("--models", required=True)
    sp.add_argument("--prune", type=float, default=0.0)
    sp.set_defaults(fn=cmd_eval)

    sp = common(sub.add_parser("sweep", help="run the spec's sweep"))
    sp.add_argument("--out-dir")
    sp.set_defaults(fn=cmd_sweep)

    sp = common(sub.add_parser("beampattern", help="write a beampattern CSV for one BS"))
    sp.add_argument("--models", required=True)
    sp.add_argument("--bs", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_beampattern)

    sp = common(sub.add_parser("prune-study", help="train once, evaluate across pruning factors"))
    sp.add_argument("--factors", type=float, nargs="+",
                    help=f"pruning factors (default: the config's, else {list(DEFAULT_PRUNE_FACTORS)})")
    sp.add_argument("--out-dir")
    sp.set_defaults(fn=cmd_prune_study)

    sp = common(sub.add_parser("overhead-report", help="instantiate the overhead formulas"))
    sp.add_argument("--M", type=int)
    sp.add_argument("--K", type=int)
    sp.add_argument("--n-t", type=int)
    sp.add_argument("--T", type=int, default=1000)
    sp.add_argument("--B", type=int, default=64 * 856088)
    sp.set_defaults(fn=cmd_overhead_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (CliError, harness.SpecError, ValueError, OSError, KeyError, TypeError) as e:
        _fail(type(e).__name__, str(e))
    return 0


if __name__ == "__main__":
    sys.exit(main())
