"""Command-line entry point: ``qmcgsa <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

from ..engine import Method, ShiftTooLargeError
from ..instruments import ConfigurationError
from . import experiments
from .config import ExperimentConfig, parse_override
from .manifest import RunManifest

EXIT_OK, EXIT_CONFIG, EXIT_REFERENCE, EXIT_NUMERICAL = 0, 2, 3, 4

COMMANDS = {
    "price": experiments.run_price,
    "greeks": experiments.run_greeks,
    "gsa": experiments.run_gsa,
    "convergence": experiments.run_convergence,
    "speedup": experiments.run_speedup,
    "stability": experiments.run_stability,
    "reference": experiments.run_reference,
}

log = logging.getLogger("qmcgsa")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qmcgsa", description="MC/QMC pricing, greeks, sensitivity analysis and benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).strip().splitlines()[0])
        p.add_argument("--config", help="TOML file with flat dotted keys")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=_u64, help="master seed for MC streams")
        p.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
        p.add_argument("--method", choices=["mc-sd", "qmc-sd", "qmc-bbd"], help="restrict to one method")
        p.add_argument("--instrument", help="comma-separated subset of european,asian,dko,cliquet")
        p.add_argument("--function", help="comma-separated subset of price,delta,gamma,vega")
        p.add_argument("--preset", help="parameter preset (default, d32, d252)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key, e.g. --set gsa.n=32768")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def config_from_args(args) -> ExperimentConfig:
    overrides = dict(parse_override(item) for item in args.set)
    if args.out is not None:
        overrides["run.out"] = args.out
    if args.seed is not None:
        overrides["run.seed"] = args.seed
    if args.threads is not None:
        overrides["run.threads"] = args.threads
    if args.method is not None:
        overrides["run.methods"] = [Method.parse(args.method).value]
    if args.instrument is not None:
        overrides["instrument.kinds"] = args.instrument
    if args.function is not None:
        overrides["run.functions"] = args.function
    if args.preset is not None:
        overrides["preset"] = args.preset
    return ExperimentConfig.load(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        manifest = RunManifest(cfg.hash())
        with manifest.timed(args.command):
            COMMANDS[args.command](cfg, manifest)
        path = manifest.write(cfg["run.out"])
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except experiments.MissingReferenceError as exc:
        print(f"missing reference: {exc}", file=sys.stderr)
        return EXIT_REFERENCE
    except (experiments.NumericalFailure, ShiftTooLargeError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"{args.command}: wrote {', '.join(sorted(manifest.outputs))} and {path} (run_id {manifest.run_id})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
