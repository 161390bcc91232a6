"""Command-line entry points.

    snowgraph train    --config FILE [--set key=value ...] [--seed N] [--out DIR]
    snowgraph transfer --checkpoint FILE --sizes 6,8,10,12,14 --episodes 10 [--seed N] [--stochastic]
    snowgraph sweep    --config FILE --axis epsilon --values 0.02,0.05,0.1,0.2 [--set ...] [--out DIR]
    snowgraph report   --runs DIR --format csv|svg [--out DIR]

Exit code 0 on success; on failure, one line ``error:<category>: <message>``
on stderr and a nonzero exit code.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from ..errors import ConfigError, ReportError, SnowgraphError
from .config import load_config
from .experiment import run_experiment, run_sweep, transfer_eval
from .records import read_record
from .report import export_report


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snowgraph")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training experiment from a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--set", action="append", default=[], dest="overrides", metavar="KEY=VALUE")
    p_train.add_argument("--seed", type=int, default=None, help="replace the config's seed list with one seed")
    p_train.add_argument("--out", default=None, help="output directory override")
    p_train.add_argument("--quiet", action="store_true")

    p_transfer = sub.add_parser("transfer", help="zero-shot evaluation of a checkpoint across sizes")
    p_transfer.add_argument("--checkpoint", required=True)
    p_transfer.add_argument("--sizes", required=True, help="comma-separated n_links values")
    p_transfer.add_argument("--episodes", type=int, default=10)
    p_transfer.add_argument("--seed", type=int, default=0)
    p_transfer.add_argument("--stochastic", action="store_true",
                            help="sample actions instead of using the distribution mean")

    p_sweep = sub.add_parser("sweep", help="grid of training runs along one axis")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--axis", required=True)
    p_sweep.add_argument("--values", required=True, help="comma-separated grid values")
    p_sweep.add_argument("--set", action="append", default=[], dest="overrides", metavar="KEY=VALUE")
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--quiet", action="store_true")

    p_report = sub.add_parser("report", help="aggregate run records into CSV or SVG")
    p_report.add_argument("--runs", required=True, help="directory containing per-seed run CSVs")
    p_report.add_argument("--format", required=True, choices=["csv", "svg"])
    p_report.add_argument("--out", default=None, help="output directory (default: the runs directory)")

    return parser


def _load(args) -> "ExperimentConfig":
    cfg = load_config(args.config, args.overrides)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    if cfg.name == "experiment":
        cfg = replace(cfg, name=Path(args.config).stem)
    return cfg


def _cmd_train(args) -> int:
    cfg = _load(args)
    records = run_experiment(cfg, verbose=not args.quiet)
    failed = [r for r in records if r.error]
    for r in failed:
        print(f"seed {r.seed} failed: {r.error}", file=sys.stderr)
    print(f"wrote {len(records)} run record(s) to {cfg.out_dir}")
    return 1 if len(failed) == len(records) else 0


def _cmd_transfer(args) -> int:
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--sizes expects comma-separated integers, got {args.sizes!r}") from None
    if not sizes:
        raise ConfigError("--sizes names no sizes")
    rows = transfer_eval(args.checkpoint, sizes, args.episodes, args.seed,
                         deterministic=not args.stochastic)
    print("n_links,mean_reward,stderr,episodes")
    for row in rows:
        print(f"{row.n_links},{row.mean_reward!r},{row.stderr!r},{row.episodes}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values names no grid points")
    points, _ = run_sweep(cfg, args.axis, values, verbose=not args.quiet)
    print("axis,value,reward_final,kl_final,error")
    hard_failures = 0
    for p in points:
        print(f"{p.axis},{p.value},{p.reward_final!r},{p.kl_final!r},{p.error or ''}")
        if p.error is not None:
            hard_failures += 1
    return 1 if hard_failures == len(points) else 0


def _cmd_report(args) -> int:
    runs_dir = Path(args.runs)
    if not runs_dir.is_dir():
        raise ReportError(f"runs directory {runs_dir} does not exist")
    paths = sorted(p for p in runs_dir.glob("*.csv")
                   if ".aggregate" not in p.name and not p.name.startswith("report_"))
    records, labels = [], {}
    for p in paths:
        try:
            rec = read_record(p)
        except ReportError:
            continue  # not a run record (e.g. sweep summary)
        records.append(rec)
        labels.setdefault(rec.config_hash, p.stem.split(".seed")[0])
    out_dir = Path(args.out) if args.out else runs_dir
    written = export_report(records, args.format, out_dir, labels)
    for w in written:
        print(w)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "transfer": _cmd_transfer,
        "sweep": _cmd_sweep,
        "report": _cmd_report,
    }
    try:
        return handlers[args.command](args)
    except SnowgraphError as e:
        print(f"error:{e.category}: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # keep the contract: one parsable line, nonzero exit
        print(f"error:internal: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
