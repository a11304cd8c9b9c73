"""Command-line front end: ``wmsqueeze {run,sweep,optimize,oracle,figure}``.

Exit codes: 0 success, 2 invalid input, 3 numeric failure, 4 oracle tolerance failure.
"""

import argparse
import sys

from . import __version__
from . import config as cfg
from . import harness
from .errors import NumericError, ValidationError, WMSqueezeError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_TOLERANCE = 4


def build_parser():
    parser = argparse.ArgumentParser(prog="wmsqueeze", description="Weak-measurement spin-squeezing simulations.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", required=needs_config, help="YAML run configuration")
        p.add_argument("--out", help=f"output directory (default: config output.dir, ${cfg.OUTPUT_ENV}, ./{cfg.DEFAULT_OUTPUT_DIR})")
        p.add_argument("--workers", type=int, default=1, help="parallel worker processes for sweep points")
        p.add_argument("--tolerance", type=float, help="relative tolerance for oracle comparisons")

    common(sub.add_parser("run", help="evaluate a single configuration (sweep allowed)"))
    common(sub.add_parser("sweep", help="evaluate a configuration with a sweep axis"))
    common(sub.add_parser("optimize", help="optimize weak value and weights"))
    common(sub.add_parser("oracle", help="compare analytic results against the exact oracle"))
    fig = sub.add_parser("figure", help="emit figure data series")
    fig.add_argument("name", choices=harness.FIGURES)
    common(fig, needs_config=False)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = cfg.load_config(args.config) if args.config else None
        if args.command == "run":
            harness.command_run(config, args.out, args.workers)
        elif args.command == "sweep":
            if config.sweep is None:
                raise ValidationError("sweep needs a 'sweep' section in the configuration")
            harness.command_run(config, args.out, args.workers)
        elif args.command == "optimize":
            harness.command_optimize(config, args.out)
        elif args.command == "oracle":
            harness.command_oracle(config, args.out, args.workers, args.tolerance)
        else:
            harness.command_figure(args.name, args.out, args.workers, config)
    except harness.ToleranceFailure as err:
        print(f"wmsqueeze: tolerance failure: {err}", file=sys.stderr)
        return EXIT_TOLERANCE
    except (ValidationError, OSError) as err:
        print(f"wmsqueeze: invalid input: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as err:
        print(f"wmsqueeze: numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except WMSqueezeError as err:
        print(f"wmsqueeze: error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
