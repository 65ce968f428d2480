"""castleforge - CLI entry point.

To run:
    uv run castleforge castle --system odometer.toml --K=-1,1 --delta 1/5 --eps 1/5
    uv run castleforge verify castle.json
"""

import argparse
import logging
import sys
from collections.abc import Sequence

import structlog

from castleforge.api.commands import HANDLERS, RunConfig, run
from castleforge.config import settings


def configure_logging(level: str | None = None) -> None:
    """JSON logs on stderr; artifacts own stdout."""
    logging.basicConfig(
        stream=sys.stderr,
        level=(level or settings.LOG_LEVEL).upper(),
        format="%(message)s",
        force=True,
    )
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.JSONRenderer(),
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )


def _common(p: argparse.ArgumentParser, system: bool = True) -> None:
    if system:
        p.add_argument("--system", help="TOML system config")
    p.add_argument("--out", help="artifact path (default: stdout)")
    p.add_argument("--jobs", type=int, default=settings.JOBS, help="worker threads")
    p.add_argument("--metrics-file", help="write prometheus metrics here")
    p.add_argument(
        "--seedless",
        action="store_true",
        default=True,
        help="fully deterministic run (always on; sampling uses CASTLEFORGE_SAMPLE_SEED)",
    )
    p.add_argument("--log-level", help="override CASTLEFORGE_LOG_LEVEL")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="castleforge",
        description="Certified castles, tilings and comparison witnesses on free symbolic systems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("castle", help="clopen castle with (K,δ)-invariant shapes")
    _common(p)
    p.add_argument("--K", help="finite K ⊆ G, e.g. -1,1")
    p.add_argument("--delta", help="invariance δ as p/q")
    p.add_argument("--eps", help="remainder bound ε as p/q")
    p.add_argument("--stages", type=int, help="build exactly this many stages")
    p.add_argument("--index-bound", type=int, help="Følner scan bound")
    p.add_argument("--rokhlin", type=int, metavar="LEVEL", help="exact odometer tower instead")

    p = sub.add_parser("tile", help="quasitile a finite region")
    _common(p, system=False)
    p.add_argument("--group", default="Z", help='"Z", "Z^d" or "heisenberg"')
    p.add_argument("--K", required=True)
    p.add_argument("--delta", required=True)
    p.add_argument("--eps", required=True)
    p.add_argument("--region", required=True, help="region E, e.g. 0..99")
    p.add_argument("--tile", dest="tiles", action="append", help="base tile (repeatable)")

    p = sub.add_parser("subequiv", help="greedy witness for A ≺ B")
    _common(p)
    p.add_argument("--source", required=True, help='clopen A, e.g. "mod 8:0"')
    p.add_argument("--target", required=True, help='clopen B, e.g. "mod 8:3,5,6"')
    p.add_argument("--window", help="mover set F (default: first Følner member that works)")
    p.add_argument("--index-bound", type=int)

    p = sub.add_parser("match", help="absorb a castle remainder into reserve levels")
    _common(p, system=False)
    p.add_argument("--castle", required=True, help="castle artifact")
    p.add_argument("--window", required=True, help="mover set F")
    p.add_argument(
        "--reserve", help="reserve fraction as p/q (default: 2d/(1-d) for remainder density d)"
    )

    p = sub.add_parser("divide", help="m disjoint parts of U of density ≥ μ(U)/m − η")
    _common(p)
    p.add_argument("--set", required=True, help="clopen U")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--eta", required=True)

    p = sub.add_parser("gamma", help="property-Γ witness functions")
    _common(p)
    p.add_argument("--L", required=True)
    p.add_argument("--eps", required=True)
    p.add_argument("--partition", help="partition artifact P")
    p.add_argument("--partition-level", type=int, help="use the atoms of this level as P")

    p = sub.add_parser("rotate", help="coding tree of an irrational rotation")
    _common(p, system=False)
    p.add_argument("--alpha", required=True, help='e.g. "(-1+sqrt5)/2"')
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--folner", default="-1,0,1")
    p.add_argument(
        "--partition",
        default="two-arc",
        help='"two-arc", "uniform:N" or "uniform-schedule" (k+1 equal arcs at level k)',
    )
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--cover-eps", help="also build a disjoint open ε-cover")

    p = sub.add_parser("verify", help="re-derive the claims of stored artifacts")
    _common(p, system=False)
    p.add_argument("artifacts", nargs="+")

    p = sub.add_parser("density", help="exact density and Følner window curve")
    _common(p)
    p.add_argument("--set", required=True, help="clopen A")
    p.add_argument("--max-index", type=int, default=64)

    return parser


_SHARED = ("command", "system", "out", "jobs", "metrics_file", "seedless", "log_level")


def config_from_args(args: argparse.Namespace) -> RunConfig:
    options = {k: v for k, v in vars(args).items() if k not in _SHARED}
    return RunConfig(
        command=args.command,
        system=getattr(args, "system", None),
        out=args.out,
        jobs=args.jobs,
        metrics_file=args.metrics_file,
        options=options,
    )


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    assert args.command in HANDLERS
    return run(config_from_args(args))


if __name__ == "__main__":
    sys.exit(main())
