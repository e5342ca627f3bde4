"""Command-line entry point: ``clusterfair <subcommand> [--seed N] [--config FILE] [--out DIR]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .exceptions import StageError
from .harness import (
    METHODS,
    CheckpointModel,
    ExperimentConfig,
    checkpoint_dict,
    graph_document,
    prepare,
    run_cell,
    run_table,
    run_tradeoff,
    train_method,
)
from .metrics import evaluate


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.out is not None:
        changes["out"] = str(args.out)
    if getattr(args, "seeds", None):
        changes["seeds"] = args.seeds
    return cfg.with_(**changes) if changes else cfg


def _emit(doc, path: Path | None = None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n")
    print(text)


def cmd_gen(args, cfg: ExperimentConfig) -> int:
    prep = prepare(cfg, args.seed)
    out = Path(cfg.out)
    graph_file = out / "graphs" / f"{cfg.hash}_seed{args.seed}_truth.json"
    p = prep.problem
    graph_file.parent.mkdir(parents=True, exist_ok=True)
    graph_file.write_text(json.dumps({"dag": p.dag.to_dict(), "partition": p.partition.to_dict(),
                                      "scm": p.scm.to_dict()}, indent=2, sort_keys=True) + "\n")
    for ds in (prep.train, prep.val, prep.test):
        ds.save(out / "data" / f"{cfg.hash}_seed{args.seed}_{ds.split}.csv", dag_file=graph_file.name)
    _emit({"seed": args.seed, "n_train": prep.train.n, "n_val": prep.val.n, "n_test": prep.test.n,
           "graph": str(graph_file)})
    return 0


def cmd_graph(args, cfg: ExperimentConfig) -> int:
    prep = prepare(cfg, args.seed)
    path = Path(cfg.out) / "graphs" / f"{cfg.hash}_seed{args.seed}_cpdag.json"
    _emit(prep.cpdag.to_dict(), path)
    return 0


def cmd_adjust(args, cfg: ExperimentConfig) -> int:
    prep = prepare(cfg, args.seed)
    if prep.family is None:
        print(prep.family_error, file=sys.stderr)
        return 1
    path = Path(cfg.out) / "graphs" / f"{cfg.hash}_seed{args.seed}_adjust.json"
    _emit(prep.family.to_dict(), path)
    return 0


def cmd_train(args, cfg: ExperimentConfig) -> int:
    prep = prepare(cfg, args.seed)
    model = train_method(cfg, prep, args.method, args.lam)
    lam_tag = "sel" if args.lam is None else f"{args.lam:g}"
    path = Path(cfg.out) / "checkpoints" / f"{cfg.hash}_{args.method}_seed{args.seed}_lam{lam_tag}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(checkpoint_dict(model, prep), sort_keys=True) + "\n")
    _emit({"checkpoint": str(path), "lam": model.lam, "selection": model.selection,
           "final_loss": model.history[-1]["loss"]})
    return 0


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    if args.checkpoint:
        prep = prepare(cfg, args.seed)
        model = CheckpointModel.load(args.checkpoint)
        report = evaluate(model, prep.test.X, prep.scaled(prep.test.y), prep.problem.scm,
                          cfg.n_eval, args.seed)
        _emit(report.to_dict() | {"checkpoint": args.checkpoint})
        return 0
    result = run_cell(cfg, args.seed, args.method, args.lam)
    _emit(result.row())
    return 0


def cmd_table(args, cfg: ExperimentConfig) -> int:
    if args.methods is not None:
        cfg = cfg.with_(methods=args.methods)
    table = run_table(cfg)
    _emit(table.rows)
    return 0


def cmd_tradeoff(args, cfg: ExperimentConfig) -> int:
    curve = run_tradeoff(cfg, args.lambdas)
    _emit({"rows": curve.rows, "spearman_lambda_unfairness": curve.spearman_unfairness,
           "spearman_lambda_rmse": curve.spearman_rmse})
    return 0


COMMANDS = {
    "gen": (cmd_gen, "generate a synthetic problem and its train/validation/test CSVs"),
    "graph": (cmd_graph, "build the cluster CPDAG of a generated problem"),
    "adjust": (cmd_adjust, "enumerate adjustment cluster sets"),
    "train": (cmd_train, "train one method and write a checkpoint"),
    "eval": (cmd_eval, "train and evaluate one cell, or evaluate a checkpoint"),
    "table": (cmd_table, "mean/std table over seeds for each method"),
    "tradeoff": (cmd_tradeoff, "c-ifair RMSE/unfairness curve over fixed lambdas"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clusterfair", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=0,
                       help="dataset seed (table/tradeoff: run only this seed unless --seeds is given)")
        p.add_argument("--config", type=Path, default=None, help="JSON experiment config")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        if name in ("train", "eval"):
            p.add_argument("--method", choices=METHODS, default="c-ifair")
            p.add_argument("--lam", type=float, default=None,
                           help="fixed penalty weight (default: select on validation)")
        if name == "eval":
            p.add_argument("--checkpoint", default=None, help="evaluate this checkpoint instead")
        if name in ("table", "tradeoff"):
            p.add_argument("--seeds", type=int, nargs="*", default=None, help="dataset seeds")
        if name == "table":
            p.add_argument("--methods", nargs="*", choices=METHODS, default=None)
        if name == "tradeoff":
            p.add_argument("--lambdas", type=float, nargs="+", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command in ("table", "tradeoff") and args.seeds is None and args.config is None:
        args.seeds = [args.seed]
    try:
        cfg = _config(args)
        return COMMANDS[args.command][0](args, cfg)
    except (StageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
