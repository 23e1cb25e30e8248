"""Command-line experiment runner: ``umbrl {pretrain,finetune,matrix,expert,analyze}``."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .analysis import pearson_p
from .pipeline import ConfigError, Snapshot, finetune, load_config, pretrain, run_matrix, train_expert
from .pipeline.runner import METRIC_COLUMNS, SUMMARY_COLUMNS, fmt, write_csv
from .pipeline.scores import mean_stderr


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML file with section.field keys")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. --set planner.num_samples=256")
    p.add_argument("--out", default="results", help="output directory")


def _csv_list(text: str) -> list[str]:
    return [t for t in text.split(",") if t]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="umbrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="reward-free pre-training with snapshots")
    _common(p)
    p.add_argument("--method", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resume", help="checkpoint file to continue from")
    p.add_argument("--stop-at", type=int, help="halt (and checkpoint) at this step")

    p = sub.add_parser("finetune", help="fine-tune a snapshot (or from scratch) on a task")
    _common(p)
    p.add_argument("--snapshot", help="snapshot file; omit to train from scratch")
    p.add_argument("--task")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--planner", action=argparse.BooleanOptionalAction, default=None)

    p = sub.add_parser("matrix", help="methods x snapshots x tasks x seeds grid")
    _common(p)
    p.add_argument("--methods", type=_csv_list, required=True)
    p.add_argument("--tasks", type=_csv_list, required=True)
    p.add_argument("--seeds", type=lambda s: [int(v) for v in _csv_list(s)])
    p.add_argument("--experts", help="CSV with task,score reference returns")

    p = sub.add_parser("expert", help="train a from-scratch expert and record its score")
    _common(p)
    p.add_argument("--task", required=True)
    p.add_argument("--frames", type=int)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("analyze", help="summarize a results directory")
    p.add_argument("--results", required=True, help="directory containing summary.csv")
    p.add_argument("--intrinsic", help="CSV with method,task,value mean intrinsic rewards")
    return parser


def read_experts(path) -> dict:
    if path is None:
        return {}
    with open(path, newline="") as fh:
        return {row["task"]: float(row["score"]) for row in csv.DictReader(fh)}


def cmd_pretrain(args, cfg) -> int:
    run = pretrain(cfg, args.method, args.seed, out_dir=args.out, resume=args.resume, stop_at=args.stop_at)
    write_csv(Path(args.out) / f"metrics_{run.run_id}.csv", METRIC_COLUMNS, run.metrics)
    for step in sorted(run.snapshots):
        print(f"snapshot step={step} method={args.method} seed={args.seed}")
    if not run.finished:
        print(f"stopped at step {run.step}; checkpoint written to {args.out}")
    return 0


def cmd_finetune(args, cfg) -> int:
    snap = Snapshot.load(args.snapshot) if args.snapshot else None
    task = args.task or cfg.env.task
    tag = Path(args.snapshot).stem if args.snapshot else "scratch"
    run_id = f"ft_{tag}_{task}_seed{args.seed}"
    res = finetune(cfg, snap, task, args.seed, planner=args.planner, run_id=run_id)
    write_csv(Path(args.out) / f"metrics_{run_id}.csv", METRIC_COLUMNS, res.metrics)
    print(f"{run_id} score={fmt(res.score)}")
    return 0


def cmd_matrix(args, cfg) -> int:
    result = run_matrix(cfg, args.methods, args.tasks, args.seeds, out_dir=args.out,
                        experts=read_experts(args.experts))
    for row in result.summary_rows:
        print(",".join(fmt(row.get(c)) for c in SUMMARY_COLUMNS))
    for run_id, err in result.errors.items():
        print(f"error {run_id}: {err}", file=sys.stderr)
    return 0


def cmd_expert(args, cfg) -> int:
    res = train_expert(cfg, args.task, args.frames, args.seed)
    path = Path(args.out) / "experts.csv"
    experts = read_experts(path) if path.exists() else {}
    experts[args.task] = res.score
    write_csv(path, ["task", "score"], [{"task": t, "score": s} for t, s in sorted(experts.items())])
    print(f"expert {args.task} score={fmt(res.score)}")
    return 0


def cmd_analyze(args) -> int:
    results = Path(args.results)
    with open(results / "summary.csv", newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if r["status"] == "ok"]
    cells: dict = {}
    long_rows = []
    for r in rows:
        cells.setdefault((r["method"], r["snapshot"], r["task"]), []).append(r)
        for metric in ("raw", "normalized"):
            if r[metric] != "":
                long_rows.append({"method": r["method"], "snapshot": r["snapshot"], "task": r["task"],
                                  "seed": r["seed"], "metric": metric, "value": float(r[metric])})
    report = []
    for (method, snap, task), runs in sorted(cells.items()):
        raw_mean, raw_se = mean_stderr([float(r["raw"]) for r in runs])
        row = {"method": method, "snapshot": snap, "task": task, "n": len(runs),
               "raw_mean": raw_mean, "raw_stderr": raw_se}
        if all(r["normalized"] != "" for r in runs):
            row["normalized_mean"], row["normalized_stderr"] = mean_stderr([float(r["normalized"]) for r in runs])
        report.append(row)
    write_csv(results / "report.csv",
              ["method", "snapshot", "task", "n", "raw_mean", "raw_stderr", "normalized_mean", "normalized_stderr"],
              report)
    write_csv(results / "long.csv", ["method", "snapshot", "task", "seed", "metric", "value"], long_rows)
    print(f"wrote {len(report)} report rows and {len(long_rows)} long-format rows")
    if args.intrinsic:
        with open(args.intrinsic, newline="") as fh:
            intrinsic: dict = {}
            for r in csv.DictReader(fh):
                intrinsic.setdefault(r["method"], {})[r["task"]] = float(r["value"])
        corr = []
        for method, per_task in sorted(intrinsic.items()):
            score_of = {}
            for (m, _, task), runs in cells.items():
                if m == method:
                    key = "normalized" if all(r["normalized"] != "" for r in runs) else "raw"
                    score_of[task] = float(np.mean([float(r[key]) for r in runs]))
            tasks = sorted(set(per_task) & set(score_of))
            try:
                rep = pearson_p([per_task[t] for t in tasks], [score_of[t] for t in tasks])
                corr.append({"method": method, "r": rep.r, "p": rep.p, "n": rep.n, "status": "ok"})
            except ValueError as exc:
                corr.append({"method": method, "n": len(tasks), "status": str(exc)})
        write_csv(results / "correlations.csv", ["method", "r", "p", "n", "status"], corr)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "analyze":
        return cmd_analyze(args)
    try:
        cfg = load_config(args.config, args.overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    handler = {
        "pretrain": cmd_pretrain,
        "finetune": cmd_finetune,
        "matrix": cmd_matrix,
        "expert": cmd_expert,
    }[args.command]
    return handler(args, cfg)


if __name__ == "__main__":
    raise SystemExit(main())
