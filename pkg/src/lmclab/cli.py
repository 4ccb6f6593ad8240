"""Command-line entry point: ``lmclab <subcommand> [--config F] [--out D] [--seed N]``.

Every subcommand prints one JSON object on success. Stage subcommands share
the run layout of ``lmclab run`` (``<out>/checkpoints/*.json``), so they can be
chained: ``pretrain`` then ``finetune`` then ``mergetune``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, LabError
from .harness.config import ExperimentConfig, load_config, parse_value
from .harness.io import load_checkpoint, save_checkpoint
from .harness.runner import (
    RunReport,
    finetune_checkpoint,
    make_task,
    mergetune_checkpoint,
    method_row,
    model_spec,
    pretrain_checkpoint,
    run_experiment,
    run_sweep,
    write_report_csv,
)
from .landscape import barrier, probe_path
from .merge import MergeConfig, merge_checkpoints

SPLITS = ("downstream_train", "eval_base", "eval_novel", "pretrain_set")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _ckpt_path(cfg, explicit, name) -> Path:
    return Path(explicit) if explicit else Path(cfg.out_dir) / "checkpoints" / f"{name}.json"


def _row_summary(cfg, name, ckpt, tp) -> dict:
    r = method_row(cfg, name, ckpt, tp)
    return {"base_acc": r.base_acc, "novel_acc": r.novel_acc, "hm": r.hm}


def cmd_pretrain(args):
    cfg = _config(args)
    tp = make_task(cfg)
    ckpt = pretrain_checkpoint(cfg, tp)
    path = _ckpt_path(cfg, None, "zeroshot")
    save_checkpoint(ckpt, path)
    return {"checkpoint": str(path), **_row_summary(cfg, "zeroshot", ckpt, tp)}


def cmd_finetune(args):
    cfg = _config(args)
    tp = make_task(cfg)
    w1 = load_checkpoint(_ckpt_path(cfg, args.init, "zeroshot"), model_spec(cfg))
    ckpt = finetune_checkpoint(cfg, tp, w1)
    path = _ckpt_path(cfg, None, "finetuned")
    save_checkpoint(ckpt, path)
    return {"checkpoint": str(path), **_row_summary(cfg, "finetuned", ckpt, tp)}


def cmd_merge(args):
    cfg = _config(args)
    tp = make_task(cfg)
    spec = model_spec(cfg)
    w1 = load_checkpoint(_ckpt_path(cfg, args.w1, "zeroshot"), spec)
    w2 = load_checkpoint(_ckpt_path(cfg, args.w2, "finetuned"), spec)
    mc = MergeConfig(args.method, alpha=args.alpha, density=args.density, drop_p=args.drop_p, seed=args.merge_seed)
    ckpt = merge_checkpoints(mc, w1, w2)
    path = _ckpt_path(cfg, None, mc.method)
    save_checkpoint(ckpt, path)
    return {"checkpoint": str(path), "method": mc.name, **_row_summary(cfg, mc.name, ckpt, tp)}


def cmd_mergetune(args):
    cfg = _config(args)
    tp = make_task(cfg)
    spec = model_spec(cfg)
    w1 = load_checkpoint(_ckpt_path(cfg, args.w1, "zeroshot"), spec)
    w2 = load_checkpoint(_ckpt_path(cfg, args.w2, "finetuned"), spec)
    history: list[dict] = []
    ckpt = mergetune_checkpoint(cfg, tp, w1, w2, history=history)
    path = _ckpt_path(cfg, None, "mergetune")
    save_checkpoint(ckpt, path)
    log = Path(cfg.out_dir) / "mergetune_loss.csv"
    with open(log, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "task", "surrogate", "lmc", "total"])
        for h in history:
            writer.writerow([h["epoch"]] + [repr(float(h[k])) for k in ("task", "surrogate", "lmc", "total")])
    return {"checkpoint": str(path), "loss_log": str(log), "final": history[-1],
            **_row_summary(cfg, "mergetune", ckpt, tp)}


def cmd_probe(args):
    cfg = _config(args)
    tp = make_task(cfg)
    spec = model_spec(cfg)
    a = load_checkpoint(args.a, spec)
    b = load_checkpoint(args.b, spec)
    dataset = getattr(tp, args.split)
    subset = None
    if cfg.probe.label_space == "split" and args.split in ("downstream_train", "eval_base"):
        subset = tp.base_classes
    elif cfg.probe.label_space == "split" and args.split == "eval_novel":
        subset = tp.novel_classes
    n = args.points or cfg.probe.n_points
    probe = probe_path(spec, a.params, b.params, n, dataset, subset,
                       endpoint_ids=(a.lineage, b.lineage), eval_spec=f"{args.split}[{cfg.probe.label_space}]")
    name = args.name or f"{Path(args.a).stem}_to_{Path(args.b).stem}"
    path = Path(cfg.out_dir) / "probes" / f"{name}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    probe.to_csv(path)
    return {"probe": str(path), "barrier": barrier(probe), "points": n}


def cmd_eval(args):
    cfg = _config(args)
    tp = make_task(cfg)
    ckpt = load_checkpoint(args.checkpoint, model_spec(cfg))
    return {"checkpoint": args.checkpoint, "provenance": ckpt.provenance,
            **_row_summary(cfg, ckpt.lineage, ckpt, tp)}


def cmd_run(args):
    cfg = _config(args)
    report = run_experiment(cfg)
    return {"out_dir": cfg.out_dir, "report": str(Path(cfg.out_dir) / "report.json"),
            "rows": [{"method": r.method, "base_acc": r.base_acc, "novel_acc": r.novel_acc, "hm": r.hm}
                     for r in report.rows],
            "barriers": report.barriers,
            "pretrain_reads_during_mergetune": report.pretrain_reads_during_mergetune}


def _parse_grid(items) -> dict:
    grid = {}
    for item in items or []:
        key, sep, values = item.partition("=")
        if not sep:
            raise ConfigError(f"grid entries look like key=v1,v2,...; got {item!r}")
        parsed = parse_value(values)
        grid[key.strip()] = list(parsed) if isinstance(parsed, (list, tuple)) else [parsed]
    return grid


def cmd_sweep(args):
    cfg = _config(args)
    grid = _parse_grid(args.grid)
    report = run_sweep(cfg, grid, workers=args.workers, method=args.method)
    return {"out_dir": cfg.out_dir, "csv": str(Path(cfg.out_dir) / "sweep.csv"), "cells": len(report.rows)}


def cmd_report(args):
    run_dir = Path(args.run or _config(args).out_dir)
    if (run_dir / "report.json").exists():
        report = RunReport.from_json(run_dir / "report.json")
        write_report_csv(report.rows, run_dir / "report.csv")
        return {"csv": str(run_dir / "report.csv"),
                "rows": [{"method": r.method, "base_acc": r.base_acc, "novel_acc": r.novel_acc, "hm": r.hm}
                         for r in report.rows]}
    if (run_dir / "sweep.json").exists():
        doc = json.loads((run_dir / "sweep.json").read_text(encoding="utf-8"))
        return {"csv": str(run_dir / "sweep.csv"), "rows": doc["rows"]}
    raise ConfigError(f"no report.json or sweep.json in {run_dir}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--out", help="output directory (overrides out_dir)")
    common.add_argument("--seed", type=int, help="master seed (overrides master_seed)")

    parser = argparse.ArgumentParser(prog="lmclab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("pretrain", parents=[common], help="train the zero-shot model on the pretraining task")
    p = sub.add_parser("finetune", parents=[common], help="fine-tune the zero-shot model on the downstream shots")
    p.add_argument("--init", help="starting checkpoint (default: <out>/checkpoints/zeroshot.json)")

    p = sub.add_parser("merge", parents=[common], help="training-free merge of zero-shot and fine-tuned")
    p.add_argument("--method", choices=("linear", "ties", "dare"), default="linear")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--density", type=float, default=0.2)
    p.add_argument("--drop-p", type=float, default=0.9)
    p.add_argument("--merge-seed", type=int, default=0)
    p.add_argument("--w1")
    p.add_argument("--w2")

    p = sub.add_parser("mergetune", parents=[common], help="continued fine-tuning from the two endpoints")
    p.add_argument("--w1")
    p.add_argument("--w2")

    p = sub.add_parser("probe", parents=[common], help="loss/accuracy along the segment between two checkpoints")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--points", type=int)
    p.add_argument("--split", choices=SPLITS, default="downstream_train")
    p.add_argument("--name")

    p = sub.add_parser("eval", parents=[common], help="base/novel accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)

    sub.add_parser("run", parents=[common], help="full experiment: every stage, probe and report")

    p = sub.add_parser("sweep", parents=[common], help="grid of experiments, one CSV row per cell")
    p.add_argument("--grid", action="append", metavar="KEY=V1,V2,...",
                   help="grid axis; keys: lambda, beta, tau, n_alpha, density, drop_p or any dotted config key")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--method", default="mergetune", help="report row to tabulate per cell")

    p = sub.add_parser("report", parents=[common], help="re-emit the CSV table of a finished run or sweep")
    p.add_argument("--run", help="run or sweep directory (default: <out>)")
    return parser


COMMANDS = {
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "merge": cmd_merge,
    "mergetune": cmd_mergetune,
    "probe": cmd_probe,
    "eval": cmd_eval,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        summary = COMMANDS[args.command](args)
    except (LabError, FileNotFoundError) as exc:
        print(json.dumps({"command": args.command, "error": f"{type(exc).__name__}: {exc}"}), file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    print(json.dumps({"command": args.command, **summary}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
