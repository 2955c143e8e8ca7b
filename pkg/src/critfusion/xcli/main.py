"""Command line entry point.

    critfusion {lindyn,gradsim,rsv-sim,deficit,sweep} [--config PATH] [--seed N]
               [--out DIR] [--jobs N] [--set key=value ...] [--overwrite]
    critfusion report RUN_DIR [RUN_DIR ...] --out DIR

Exit status: 0 success, 2 configuration error, 3 computation failure.
"""
from __future__ import annotations

import argparse
import sys

from .. import __version__
from .config import KINDS, OUT_ENV, ConfigError, load_config

EXIT_OK, EXIT_CONFIG, EXIT_COMPUTE = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON experiment config")
    common.add_argument("--seed", type=int, help="base seed (overrides the config)")
    common.add_argument("--out", help=f"output directory (default: under ${OUT_ENV} or ./runs)")
    common.add_argument("--jobs", type=int, help="worker processes for independent runs")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value by dotted key, e.g. deficit.task.noise_std=0.3")
    common.add_argument("--overwrite", action="store_true", help="replace a non-empty output directory")
    parser = argparse.ArgumentParser(prog="critfusion", description="Multi-source learning dynamics experiments.")
    parser.add_argument("--version", action="version", version=f"critfusion {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        sub.add_parser(kind, parents=[common], help=f"run a {kind} experiment")
    rep = sub.add_parser("report", help="compare completed deficit or sweep runs")
    rep.add_argument("runs", nargs="+", help="run directories")
    rep.add_argument("--out", required=True, help="report output directory")
    rep.add_argument("--overwrite", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    # imported late so `--help` stays fast
    from .runner import ComputationError, run

    try:
        if args.command == "report":
            from .report import report

            manifest = report(args.runs, args.out, args.overwrite)
            print(args.out)
            return EXIT_OK
        overrides = list(args.overrides)
        if args.overwrite:
            overrides.append("overwrite=true")
        config = load_config(args.config, args.command, overrides, args.seed, args.out, args.jobs)
        manifest = run(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ComputationError as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    out = config.output_dir()
    if manifest.status != "ok":
        print(f"computation failed: {manifest.error} (partial results in {out})", file=sys.stderr)
        return EXIT_COMPUTE
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
