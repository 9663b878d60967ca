"""Command-line entry for the scenario harness.

    rosproxy harness run pubsub --proxied
    rosproxy harness run stale --direct

Prints the scenario report as key=value lines and exits 0 when the
report is clean, 1 otherwise.
"""

from __future__ import annotations

import argparse
import asyncio
import logging
import sys
from typing import List, Optional

from .scenarios import SCENARIOS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rosproxy harness",
        description="run a self-contained proxy scenario on loopback",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one scenario and print its report")
    run.add_argument("scenario", choices=sorted(SCENARIOS))
    mode = run.add_mutually_exclusive_group()
    mode.add_argument(
        "--proxied",
        dest="mode",
        action="store_const",
        const="proxied",
        help="route the internal node through the proxy (default)",
    )
    mode.add_argument(
        "--direct",
        dest="mode",
        action="store_const",
        const="direct",
        help="let the internal node talk to the master directly",
    )
    run.set_defaults(mode="proxied")
    run.add_argument(
        "--log-level",
        default="warning",
        choices=["debug", "info", "warning", "error"],
    )
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    scenario = SCENARIOS[args.scenario]
    report = asyncio.run(scenario(args.mode))
    for line in report.lines():
        print(line)
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())
