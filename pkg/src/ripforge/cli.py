"""Command-line entry point: ``ripforge <command> [flags]``."""

import argparse
import json
import logging
import sys

from .experiments import EXIT_INPUT, ExperimentSpec, run


def _floats(text):
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser():
    p = argparse.ArgumentParser(prog="ripforge", description="Spurious-local-minimum instances for matrix sensing.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("verify-example1", help="check the three-measurement example")
    s.add_argument("--out")

    s = sub.add_parser("forge", help="forge an instance with a certified spurious minimum")
    s.add_argument("--n", type=int, default=12)
    s.add_argument("--r", type=int, default=1)
    s.add_argument("--recipe", choices=["good", "bad"], default="bad")
    s.add_argument("--normalize", choices=["lambda_min", "none"], default="lambda_min")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")

    s = sub.add_parser("sgd-hist", help="failure rate and error histogram from Gaussian starts")
    s.add_argument("--instance", help="instance or forge bundle JSON (default: Example 1)")
    s.add_argument("--trials", type=int, default=10000)
    s.add_argument("--steps", type=int, default=1000)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--momentum", type=float, default=0.9)
    s.add_argument("--mode", choices=["success_below", "failure_above"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.add_argument("--csv", help="per-trial records")
    s.add_argument("--hist-csv", help="histogram bins")

    s = sub.add_parser("gamma-sweep", help="SGD from x = gamma w + (1 - gamma) x_loc")
    s.add_argument("--instance", required=True)
    s.add_argument("--xloc", help="JSON list (column-major) or object with key x; default from the bundle")
    s.add_argument("--gammas", type=_floats, default=(0.0, 0.25, 0.5, 0.75, 1.0))
    s.add_argument("--trials", type=int, default=1000)
    s.add_argument("--steps", type=int, default=10000)
    s.add_argument("--lr", type=float, default=1e-4)
    s.add_argument("--momentum", type=float, default=0.9)
    s.add_argument("--mode", choices=["success_below", "failure_above"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.add_argument("--csv")

    s = sub.add_parser("delta-search", help="delta_ub and delta_lb over random (x, z)")
    s.add_argument("--n", type=int, default=2)
    s.add_argument("--r", type=int, default=1)
    s.add_argument("--samples", type=int, default=50)
    s.add_argument("--time-budget", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    return p


_KIND = {"verify-example1": "verify_example1", "forge": "forge", "sgd-hist": "sgd_histogram",
         "gamma-sweep": "gamma_sweep", "delta-search": "delta_search"}


def spec_from_args(args):
    fields = {k: v for k, v in vars(args).items() if k not in ("command", "verbose") and v is not None}
    return ExperimentSpec(kind=_KIND[args.command], **fields)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    status, result = run(spec_from_args(args))
    stream = sys.stderr if "error" in result else sys.stdout
    print(json.dumps({"status": status, **result}, default=float), file=stream)
    return status


if __name__ == "__main__":
    sys.exit(main())
