"""Command-line entry point.

Subcommands::

    sweep         --config FILE --out CSV [--seed N] [--jobs K]
    eval-real     --dataset {jester,movielens} --path DIR --solver NAME
                  [--users N] [--seed N] [--rank R] --out CSV
    spectrum      --dataset jester --path DIR --out CSV [--top K]
    rand-baseline --pairs N --seed S

Exit status is 0 on success, 1 for configuration errors and 2 for data
errors.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from .datasets import (
    REAL_SOLVERS,
    DataError,
    eval_real,
    load_jester,
    load_movielens,
    random_prediction_nmae,
    spectrum_dump,
)
from .sweep import ConfigError, load_config, run_sweep, write_csv, write_timing_csv

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 1, 2

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "configs")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _build_parser():
    p = _Parser(prog="noisymc", description="Matrix completion benchmarks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sweep", help="run a synthetic sweep from a JSON config")
    s.add_argument("--config", required=True,
                   help="JSON config file, or the name of a shipped config (e.g. fig1)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, help="override master_seed")
    s.add_argument("--trials", type=int, help="override trials")
    s.add_argument("--jobs", type=int, default=1)

    e = sub.add_parser("eval-real", help="held-out NMAE on a ratings dataset")
    e.add_argument("--dataset", required=True, choices=("jester", "movielens"))
    e.add_argument("--path", required=True)
    e.add_argument("--solver", required=True, choices=REAL_SOLVERS)
    e.add_argument("--users", type=int, default=1000, help="Jester users to sample")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--rank", type=int, help="rank for rank-aware solvers (default: estimated)")
    e.add_argument("--split", default="u1", help="MovieLens split prefix")
    e.add_argument("--out", required=True)

    sp = sub.add_parser("spectrum", help="singular values of the complete Jester submatrix")
    sp.add_argument("--dataset", required=True, choices=("jester",))
    sp.add_argument("--path", required=True)
    sp.add_argument("--top", type=int)
    sp.add_argument("--out", required=True)

    rb = sub.add_parser("rand-baseline", help="NMAE of uniform random predictions")
    rb.add_argument("--pairs", type=int, required=True)
    rb.add_argument("--seed", type=int, required=True)
    return p


def _resolve_config(name):
    if os.path.exists(name):
        return name
    shipped = os.path.join(CONFIG_DIR, name if name.endswith(".json") else name + ".json")
    if os.path.exists(shipped):
        return shipped
    raise ConfigError(f"no config file {name!r}")


def _timing_path(out):
    root, ext = os.path.splitext(out)
    return f"{root}.timing{ext or '.csv'}"


def _cmd_sweep(args):
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    cfg = load_config(_resolve_config(args.config), master_seed=args.seed, trials=args.trials)
    records = run_sweep(cfg, jobs=args.jobs)
    write_csv(records, args.out)
    write_timing_csv(records, _timing_path(args.out))
    failed = sum(1 for r in records if r.row_type == "trial" and not r.status.startswith("ok"))
    print(f"wrote {len(records)} rows to {args.out} ({failed} failed solves)")
    return EXIT_OK


def _write_rows(path, rows):
    header = list(rows[0])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if row[k] is None else (repr(row[k]) if isinstance(row[k], float) else row[k])
                        for k in header])


def _cmd_eval_real(args):
    if args.dataset == "jester":
        ds = load_jester(args.path, args.users, args.seed)
    else:
        ds = load_movielens(os.path.join(args.path, f"{args.split}.base"),
                            os.path.join(args.path, f"{args.split}.test"))
    report, row = eval_real(ds, args.solver, rank=args.rank, seed=args.seed)
    _write_rows(args.out, [row])
    print(f"{args.dataset} {args.solver}: NMAE={report.nmae} status={report.status}")
    return EXIT_OK


def _cmd_spectrum(args):
    s = spectrum_dump(args.path, args.top)
    rows = [{"index": i + 1, "singular_value": float(v)} for i, v in enumerate(s)]
    _write_rows(args.out, rows)
    print(f"wrote {len(rows)} singular values to {args.out}")
    return EXIT_OK


def _cmd_rand_baseline(args):
    if args.pairs < 1:
        raise ConfigError("--pairs must be at least 1")
    print(repr(random_prediction_nmae(args.seed, args.pairs)))
    return EXIT_OK


COMMANDS = {
    "sweep": _cmd_sweep,
    "eval-real": _cmd_eval_real,
    "spectrum": _cmd_spectrum,
    "rand-baseline": _cmd_rand_baseline,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
