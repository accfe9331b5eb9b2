"""Command line: dmpk <experiment> --config FILE [--seed U64] [--out DIR] [--threads K].

Exit status 0 on PASS, 2 on FAIL, 1 on usage or resource errors.
"""

import argparse
import dataclasses
import sys

from .config import Experiment, default_config, load_config, validate
from .errors import ConfigError, DmpkError
from .experiments import run_experiment, write_report

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_ERROR)


def build_parser():
    p = _Parser(prog="dmpk", description="Run a Monte Carlo experiment and write CSV/JSON.")
    p.add_argument("experiment", type=str.upper, choices=[e.value for e in Experiment])
    p.add_argument("--config", help="TOML configuration file (defaults if omitted)")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker threads")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            cfg = load_config(args.config, args.experiment)
        else:
            cfg = default_config(args.experiment)
        updates = {k: v for k, v in (("master_seed", args.seed), ("output_dir", args.out),
                                     ("threads", args.threads)) if v is not None}
        cfg = validate(dataclasses.replace(cfg, **updates))
        result = run_experiment(cfg)
        csv_path, json_path = write_report(result, cfg.output_dir, cfg)
    except ConfigError as exc:
        print(f"dmpk: config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except DmpkError as exc:
        print(f"dmpk: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for c in result.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.value:.6g} ({c.tolerance})")
    print(f"{result.experiment.value}: {result.verdict}  -> {csv_path}, {json_path}")
    return EXIT_PASS if result.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
