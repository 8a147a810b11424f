"""Command line entry point.

    qmcritz train CONFIG [--set key=value ...]
    qmcritz compare CONFIG [CONFIG ...] [--reuse] [--table FILE] [--plots DIR]
    qmcritz gapsim CONFIG [--set key=value ...]
    qmcritz discrepancy --kind sobol|mc --n N --k K [--seed S]

Exit codes: 0 success, 1 usage or configuration error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import ConfigurationError, NumericFailure, UsageError
from .gapsim import grid_csv, parse_gapsim_config, run_grid
from .metrics import ErrorSeries, fmt_float
from .report import compare_table, emit_plot_data, summarize, table_csv
from .sampler import PrngState, SobolState, l2_star_discrepancy, mc_points, sobol_points
from .train import RunRecord, train

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qmcritz", description="Deep Ritz training with MC or Sobol QMC sampling")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config value")
    p.add_argument("--output", help="output directory (overrides config)")

    p = sub.add_parser("compare", help="train (or reload) several runs and tabulate them")
    p.add_argument("configs", nargs="+")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override applied to every config")
    p.add_argument("--reuse", action="store_true", help="reload series CSVs that already exist instead of retraining")
    p.add_argument("--table", help="write the comparison CSV here (default: stdout)")
    p.add_argument("--plots", help="directory for plot-ready series")

    p = sub.add_parser("gapsim", help="expected optimality gap on a noisy quadratic")
    p.add_argument("config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--output", help="CSV path (default: stdout)")

    p = sub.add_parser("discrepancy", help="L2-star discrepancy of a point set")
    p.add_argument("--kind", choices=("sobol", "mc"), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_train(args) -> int:
    overrides = list(args.set)
    if args.output:
        overrides.append(f"output={args.output}")
    cfg = load_config(args.config, overrides)
    rec = train(cfg, progress=args.verbose)
    print(f"{cfg.run_label}: final windowed relative L2 error {fmt_float(rec.final_error)} ({rec.wall_clock:.1f}s)")
    return EXIT_OK


def _load_or_train(cfg, reuse: bool) -> RunRecord:
    if reuse and cfg.output:
        path = Path(cfg.output) / f"{cfg.run_label}.csv"
        if path.exists():
            return RunRecord(cfg, ErrorSeries.from_csv(path.read_text(), cfg.window))
    return train(cfg)


def _cmd_compare(args) -> int:
    records = [_load_or_train(load_config(c, args.set), args.reuse) for c in args.configs]
    text = table_csv(compare_table(summarize(r) for r in records))
    if args.table:
        Path(args.table).write_text(text)
    else:
        sys.stdout.write(text)
    if args.plots:
        emit_plot_data(records, args.plots)
    return EXIT_OK


def _cmd_gapsim(args) -> int:
    cfg = parse_gapsim_config(Path(args.config).read_text(), args.set)
    text = grid_csv(run_grid(cfg))
    out = args.output or cfg.output
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_discrepancy(args) -> int:
    if args.n < 1 or args.k < 1:
        raise UsageError("--n and --k must be positive")
    if args.kind == "sobol":
        ps, _ = sobol_points(SobolState(args.k), args.n)
    else:
        ps, _ = mc_points(PrngState(args.seed), args.n, args.k)
    print(fmt_float(l2_star_discrepancy(ps)))
    return EXIT_OK


_COMMANDS = {"train": _cmd_train, "compare": _cmd_compare, "gapsim": _cmd_gapsim, "discrepancy": _cmd_discrepancy}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (ConfigurationError, UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
