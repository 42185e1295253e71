"""``isptrain`` command line: gen-data, run, verify, report.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Set ``ISPTRAIN_LOG`` (e.g. ``debug``) to change verbosity.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import JobConfig, load_config, set_key
from .cost import (MESSAGING_VM_USD_H, STORE_VM_USD_H, FN_RATE_USD_S, MetricLog, PricingTable,
                   SchemaError, budget_cutoff, perf_per_dollar)
from .data import MANIFEST, DatasetSpec, generate, minmax_normalize, write_corpus
from .errors import ConfigurationError, IsptrainError, JobAborted
from .runtime import run_job
from .verify import run_all

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("isptrain")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="isptrain", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic corpus as mini-batch files")
    g.add_argument("--kind", choices=["lr", "pmf"], default="lr")
    g.add_argument("--n", type=_positive_int, default=10_000, help="samples (lr)")
    g.add_argument("--dim", type=_positive_int, default=1000)
    g.add_argument("--n-users", type=int, default=500)
    g.add_argument("--n-movies", type=int, default=800)
    g.add_argument("--rank", type=int, default=20, help="planted rank (pmf)")
    g.add_argument("--sparsity", type=float, default=0.01)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--b", type=_positive_int, default=250, help="mini-batch size")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--normalize", action="store_true", help="min-max scale features first")
    g.add_argument("--out", default="data")
    g.add_argument("--force", action="store_true", help="overwrite an existing corpus")

    r = sub.add_parser("run", help="run a training job")
    r.add_argument("--config", help="flat key = value config file")
    r.add_argument("--data")
    r.add_argument("--model", choices=["lr", "pmf"])
    r.add_argument("--sync", choices=["bsp", "ssp", "isp"])
    r.add_argument("--v", type=float)
    r.add_argument("--slack", type=int)
    r.add_argument("--workers", type=int)
    r.add_argument("--b", type=int, dest="batch_size")
    r.add_argument("--shards", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--mode", choices=["simulated", "threaded"])
    r.add_argument("--max-steps", type=int)
    r.add_argument("--threshold", type=float, help="stop at this smoothed loss")
    r.add_argument("--scheduler", action="store_true", help="enable scale-in")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="any dotted config key, may repeat")
    r.add_argument("--out", default="run", help="output directory")

    v = sub.add_parser("verify", help="run the consistency checks")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--traces", type=_positive_int, default=200)
    v.add_argument("--trace", help="dump one replay trace to this file")
    v.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("report", help="compare metric logs")
    p.add_argument("logs", nargs="+")
    p.add_argument("--budgets", default="0.09,0.18,0.36", help="comma-separated $ budgets")
    p.add_argument("--out", default="report")
    return ap


# -- gen-data ------------------------------------------------------------

def cmd_gen_data(args) -> int:
    out = Path(args.out)
    if (out / MANIFEST).exists() and not args.force:
        print(f"error: {out} already holds a corpus (use --force)", file=sys.stderr)
        return EXIT_USAGE
    if args.kind == "lr":
        spec = DatasetSpec(kind="lr", n=args.n, dim=args.dim, sparsity=args.sparsity,
                           noise=args.noise, seed=args.seed)
    else:
        spec = DatasetSpec(kind="pmf", n_users=args.n_users, n_movies=args.n_movies,
                           rank=args.rank, sparsity=args.sparsity, noise=args.noise,
                           seed=args.seed)
    corpus = generate(spec)
    if args.normalize:
        corpus = minmax_normalize(corpus)
    if out.exists():
        for old in out.glob("part-*.txt"):
            old.unlink()
    batches = write_corpus(out, corpus, args.b, args.seed, normalized=args.normalize)
    print(f"wrote {len(corpus)} samples in {len(batches)} batches to {out}")
    return EXIT_OK


# -- run -------------------------------------------------------------------

_FLAG_KEYS = {"data": "data", "model": "model", "sync": "sync", "v": "v", "slack": "slack",
              "workers": "workers", "batch_size": "batch_size", "shards": "shards",
              "seed": "seed", "mode": "mode", "max_steps": "stop.max_steps",
              "threshold": "stop.loss_threshold"}


def build_config(args) -> JobConfig:
    cfg = load_config(args.config) if args.config else JobConfig()
    for attr, key in _FLAG_KEYS.items():
        value = getattr(args, attr)
        if value is not None:
            set_key(cfg, key, str(value))
    if args.scheduler:
        cfg.scheduler.enabled = True
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        set_key(cfg, key, value)
    cfg.output = args.out
    return cfg.validate()


def cmd_run(args) -> int:
    cfg = build_config(args)
    result = run_job(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.metric_log.write(out / "metrics.csv")
    (out / "cost.csv").write_text(result.cost.to_csv(), encoding="utf-8")
    summary = "\n".join([
        result.cost.summary(),
        f"steps        {result.steps}",
        f"stop         {result.stop_reason}",
        f"final loss   {result.final_smoothed:.6f}",
        f"workers      {len(result.active)}",
        f"bytes        {result.bytes_published}",
        f"checksum     {result.checksum}",
    ])
    (out / "summary.txt").write_text(summary + "\n", encoding="utf-8")
    print(summary)
    return EXIT_OK


# -- verify ------------------------------------------------------------------

def cmd_verify(args) -> int:
    results = run_all(args.seed, args.traces, args.inject_fault, args.trace)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.ok for r in results) else EXIT_FAIL


# -- report ------------------------------------------------------------------

def _pricing_from(header: dict) -> PricingTable:
    def get(key, default):
        return float(header.get(f"pricing.{key}", default))
    bill = header.get("pricing.bill_supervisor", "true") == "true"
    return PricingTable(get("fn_rate", FN_RATE_USD_S),
                        [("messaging", get("messaging_usd_h", MESSAGING_VM_USD_H)),
                         ("store", get("store_usd_h", STORE_VM_USD_H))],
                        extra_lanes=1 if bill else 0)


def cmd_report(args) -> int:
    try:
        budgets = [float(b) for b in args.budgets.split(",") if b.strip()]
    except ValueError:
        print(f"error: bad budget list {args.budgets!r}", file=sys.stderr)
        return EXIT_USAGE
    stems = [Path(p).stem for p in args.logs]
    names = stems if len(set(stems)) == len(stems) else [f"run{i}" for i in range(len(stems))]
    runs = []
    for name, path in zip(names, args.logs):
        try:
            runs.append((name, MetricLog.read(path)))
        except (SchemaError, ValueError) as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            return EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    lines = ["run,step,wall_s,loss_ewma"]
    cost_lines = ["run,cumulative_cost_usd,loss_ewma"]
    perf_lines = ["run,exec_time_s,cost_usd,perf_per_dollar"]
    for name, mlog in runs:
        for row in mlog.rows:
            lines.append(f"{name},{row.step},{row.wall_ms / 1000.0:.6f},{row.loss_ewma!r}")
            cost_lines.append(f"{name},{row.cumulative_cost_usd:.12f},{row.loss_ewma!r}")
        last = mlog.rows[-1]
        perf = perf_per_dollar(last.wall_ms / 1000.0, last.cumulative_cost_usd)
        perf_lines.append(f"{name},{last.wall_ms / 1000.0:.6f},{last.cumulative_cost_usd:.12f},{perf!r}")
    budget_lines = ["budget_usd," + ",".join(f"{n}_time_s,{n}_loss" for n, _ in runs)]
    for b in budgets:
        cells = []
        for _, mlog in runs:
            t, loss = budget_cutoff(mlog, _pricing_from(mlog.header), b)
            cells.append(f"{t:.6f},{loss!r}")
        budget_lines.append(f"{b}," + ",".join(cells))

    tables = {"loss_vs_time.csv": lines, "cost_vs_loss.csv": cost_lines,
              "perf_per_dollar.csv": perf_lines, "budget.csv": budget_lines}
    for fname, content in tables.items():
        (out / fname).write_text("\n".join(content) + "\n", encoding="utf-8")
    print("\n".join(budget_lines))
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "run": cmd_run, "verify": cmd_verify, "report": cmd_report}


def main(argv=None) -> int:
    level = os.environ.get("ISPTRAIN_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (JobAborted, IsptrainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
