"""Command-line entry point.

Exit codes: 0 success, 2 bad configuration or arguments, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys

from . import harness
from .basis import BoxDomain, build_basis
from .errors import ConfigError, ConvergenceError, DomainError, InvalidScheduleError, NumericalRankError
from .privacy import NoiseSchedule, epsilon_of, gamma_for

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    # report usage errors through the same exit path as bad config files
    def error(self, message):
        raise ConfigError(message)


def _load(args) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig.load(args.config) if args.config else harness.ExperimentConfig()
    if getattr(args, "output", None):
        cfg.output = args.output
    return cfg


def _emit(text: str, path: str | None) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _cmd_sweep(args) -> int:
    cfg = _load(args)
    result = harness.sweep(cfg, write=True)
    failed = sum(1 for r in result.rows if not math.isfinite(r.error))
    print(f"wrote {len(result.rows)} rows to {cfg.output}")
    if failed:
        print(f"{failed} runs failed numerically", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_baseline(args) -> int:
    cfg = _load(args)
    result = harness.baseline_sweep(cfg, write=True)
    print(f"wrote {len(result.rows)} rows to {cfg.output}")
    return EXIT_OK


def _cmd_demo(args) -> int:
    cfg = _load(args)
    rep = harness.demo_impossibility(cfg, separation=args.separation)
    print(json.dumps({
        "runs": rep.runs,
        "radius": rep.radius,
        "freq_true": rep.freq_true,
        "freq_other": rep.freq_other,
        "optimizer_true": rep.optimizer_true,
        "optimizer_other": rep.optimizer_other,
    }, indent=2))
    return EXIT_OK


def _cmd_bounds(args) -> int:
    cfg = _load(args)
    result = harness.bounds_curve(cfg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("epsilon", "degree", "bound"))
    for r in result.sorted_rows():
        w.writerow((format(r.epsilon, ".17g"), r.degree, format(r.bound, ".17g")))
    _emit(buf.getvalue(), args.output)
    return EXIT_OK


def _parse_domain(text: str, dim: int) -> BoxDomain:
    """``5`` gives [-5, 5]^dim; ``lo1,hi1,lo2,hi2,...`` gives an explicit box."""
    try:
        vals = [float(v) for v in text.split(",")]
        if len(vals) == 1:
            return BoxDomain.cube(vals[0], dim)
        if len(vals) % 2:
            raise ValueError("expected one half-width or lo,hi pairs")
        return BoxDomain(tuple(vals[0::2]), tuple(vals[1::2]))
    except ValueError as exc:
        raise ConfigError(f"bad domain {text!r}: {exc}") from exc


def _cmd_basis(args) -> int:
    domain = _parse_domain(args.domain, args.dim)
    if args.degree < 0:
        raise ConfigError("degree must be nonnegative")
    basis = build_basis(domain, args.degree)
    if args.output:
        basis.save(args.output)
        print(f"basis of dimension {basis.dim} written to {args.output}")
    else:
        print(json.dumps({"dim": basis.dim, "max_degree": basis.max_degree, "domain": domain.to_dict()}))
    return EXIT_OK


def _cmd_privacy(args) -> int:
    try:
        if args.gamma is not None:
            eps = epsilon_of(NoiseSchedule(args.gamma, args.p), args.q)
            print(json.dumps({"gamma": args.gamma, "p": args.p, "q": args.q, "epsilon": eps}))
        else:
            sched = gamma_for(args.epsilon, args.p, args.q)
            print(json.dumps({"epsilon": args.epsilon, "p": args.p, "q": args.q, "gamma": sched.gamma}))
    except (InvalidScheduleError, DomainError) as exc:
        raise ConfigError(str(exc)) from exc
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="funcdp", description="Functional-perturbation differential privacy experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress and warnings")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(p):
        p.add_argument("--config", help="JSON experiment config (defaults are used when omitted)")
        p.add_argument("--output", help="override the output path")
        return p

    with_config(sub.add_parser("sweep", help="privacy/accuracy sweep over epsilon and truncation degree")).set_defaults(
        func=_cmd_sweep
    )
    with_config(sub.add_parser("baseline", help="message-perturbing baseline sweep")).set_defaults(func=_cmd_baseline)

    demo = sub.add_parser("demo", help="Monte-Carlo demonstrations")
    demo_sub = demo.add_subparsers(dest="demo", required=True, parser_class=_Parser)
    imp = with_config(demo_sub.add_parser("impossibility", help="message perturbation cannot hide the information set"))
    imp.add_argument("--separation", type=float, default=1.0, help="distance between the two optimizers")
    imp.set_defaults(func=_cmd_demo)

    bounds = sub.add_parser("bounds", help="closed-form accuracy bounds")
    bounds_sub = bounds.add_subparsers(dest="bounds", required=True, parser_class=_Parser)
    with_config(bounds_sub.add_parser("curve", help="bound per (epsilon, degree) as CSV")).set_defaults(func=_cmd_bounds)

    basis = sub.add_parser("basis", help="orthonormal polynomial bases")
    basis_sub = basis.add_subparsers(dest="basis", required=True, parser_class=_Parser)
    build = basis_sub.add_parser("build", help="build and optionally save a basis")
    build.add_argument("--degree", type=int, required=True)
    build.add_argument("--domain", default="5", help="half-width, or lo1,hi1,lo2,hi2,...")
    build.add_argument("--dim", type=int, default=2, help="dimension when --domain is a half-width")
    build.add_argument("--output", help="write the basis as JSON")
    build.set_defaults(func=_cmd_basis)

    priv = sub.add_parser("privacy", help="epsilon/gamma conversion")
    which = priv.add_mutually_exclusive_group(required=True)
    which.add_argument("--gamma", type=float, help="noise scale; prints epsilon")
    which.add_argument("--epsilon", type=float, help="privacy level; prints gamma")
    priv.add_argument("--p", type=float, default=0.55)
    priv.add_argument("--q", type=float, default=1.1)
    priv.set_defaults(func=_cmd_privacy)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, NumericalRankError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
