"""Command-line entry point.

``toy-trainer <workspace>`` runs the wire contract against a prepared
workspace; ``toy-trainer --selftest`` drives the three conformance scenarios
through the engine supervisor.  JSON results go to stdout, logs to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .runner import run_trainer
from .selftest import run_selftest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="toy-trainer",
        description="Toy-scale training executor for candidate token mixers.",
    )
    parser.add_argument("workspace", nargs="?", help="prepared run workspace")
    parser.add_argument(
        "--selftest",
        action="store_true",
        help="run the three conformance scenarios against the engine supervisor",
    )
    parser.add_argument("--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.INFO
    )
    if args.selftest == (args.workspace is not None):
        parser.error("pass exactly one of: a workspace path, or --selftest")
    if args.selftest:
        report = run_selftest()
        json.dump(report, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
        return 0 if report["passed"] else 1
    return run_trainer(args.workspace)


if __name__ == "__main__":
    sys.exit(main())
