"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from ..graphcore import GraphFormatError, generate_sbm, save_graph
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, load_config
from . import experiments as ex

log = logging.getLogger("metagps")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="experiment seed")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="metagps", description="Few-shot node classification experiments")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="meta-train and write checkpoint plus JSONL log")
    _common(p)

    p = sub.add_parser("eval", help="meta-test a checkpoint and print the report")
    _common(p)
    p.add_argument("--checkpoint", help="defaults to <out>/checkpoint.json")

    p = sub.add_parser("generate", help="write an SBM dataset directory")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--p-in", type=float, default=0.02)
    p.add_argument("--p-out", type=float, default=0.002)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--noise", type=float, default=None, help="feature noise stddev")
    p.add_argument("--split", type=int, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="data/sbm")

    p = sub.add_parser("ablate", help="full model and the five ablation variants")
    _common(p)

    p = sub.add_parser("noise-sweep", help="accuracy over support-noise ratios")
    _common(p)
    p.add_argument("--seeds", type=int, nargs="+", help="run the sweep for several seeds")
    p.add_argument("--no-retrain", action="store_true",
                   help="train once on clean tasks and corrupt only test supports")

    p = sub.add_parser("dump-embeddings", help="write node embeddings as CSV")
    _common(p)
    p.add_argument("--checkpoint", help="defaults to <out>/checkpoint.json")
    p.add_argument("--split", default="test", help="split scored by SC/DB")

    sub.add_parser("check", help="run the invariant and gradient self-checks")
    return parser


def _config(args):
    return load_config(args.config, args.set, seed=args.seed, out=args.out)


def _write_json(path: str, obj) -> None:
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def cmd_train(args) -> int:
    cfg = _config(args)
    _write_json(os.path.join(cfg.out, "config.json"), cfg.to_dict())
    state, tlog, _, rng = ex.train(cfg, log_path=os.path.join(cfg.out, "train.jsonl"))
    meta = {"best_epoch": tlog.best_epoch, "best_val_accuracy": tlog.best_val_accuracy,
            "stopped_early": tlog.stopped_early, "batches": len(tlog.records)}
    save_checkpoint(os.path.join(cfg.out, "checkpoint.json"), state, rng=rng, meta=meta)
    print(json.dumps(meta, sort_keys=True))
    return EXIT_OK


def _load_state(args, cfg):
    path = args.checkpoint or os.path.join(cfg.out, "checkpoint.json")
    state, _, _ = load_checkpoint(path)
    return state


def cmd_eval(args) -> int:
    cfg = _config(args)
    state = _load_state(args, cfg)
    G = ex.build_graph(cfg)
    report = ex.evaluate(cfg, state, G)
    d = report.to_dict()
    _write_json(os.path.join(cfg.out, "report.json"), d)
    print(json.dumps(d, sort_keys=True))
    return EXIT_OK


def cmd_generate(args) -> int:
    from .config import DEFAULT_FEATURE_NOISE

    split = tuple(args.split) if args.split else None
    noise = DEFAULT_FEATURE_NOISE if args.noise is None else args.noise
    if split is not None and sum(split) != args.classes:
        raise ConfigError(f"split {list(split)} does not add up to {args.classes} classes")
    try:
        G = generate_sbm(args.classes, args.per_class, args.p_in, args.p_out, args.feature_dim,
                         noise, seed=args.seed, split=split)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    save_graph(G, args.out)
    print(json.dumps({"out": args.out, "nodes": G.n, "edges": int(len(G.edges))}))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    rows = ex.ablation_table(cfg)
    _write_json(os.path.join(cfg.out, "ablation.json"), rows)
    print(ex.format_table(rows))
    return EXIT_OK


def cmd_noise_sweep(args) -> int:
    cfg = _config(args)
    seeds = args.seeds or [cfg.seed]
    G = ex.build_graph(cfg)
    result = []
    for s in seeds:
        rows = ex.noise_sweep(cfg.replace(seed=s), G=G, retrain=not args.no_retrain)
        accs = [r["accuracy_mean"] for r in rows]
        result.append({"seed": s, "rows": rows, "non_increasing": ex.is_non_increasing(accs)})
        print(json.dumps({"seed": s, "accuracy": accs}))
    _write_json(os.path.join(cfg.out, "noise_sweep.json"), result)
    return EXIT_OK


def cmd_dump_embeddings(args) -> int:
    cfg = _config(args)
    state = _load_state(args, cfg)
    G = ex.build_graph(cfg)
    _, problem = ex.initial_state(cfg, G, state.ablation)
    Z = ex.embeddings(problem, state)
    path = os.path.join(cfg.out, "embeddings.csv")
    ex.dump_embeddings(path, G, Z)
    quality = ex.embedding_quality(G, Z, args.split)
    print(json.dumps({"out": path, **quality}, sort_keys=True))
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_checks

    failed = 0
    for name, ok, detail in run_checks():
        print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
        failed += not ok
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


COMMANDS = {
    "train": cmd_train, "eval": cmd_eval, "generate": cmd_generate, "ablate": cmd_ablate,
    "noise-sweep": cmd_noise_sweep, "dump-embeddings": cmd_dump_embeddings, "check": cmd_check,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, GraphFormatError, OSError, RuntimeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
