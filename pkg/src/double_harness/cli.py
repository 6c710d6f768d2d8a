"""Command-line runner for the shipped driver suites.

Exit codes: 0 when every case passes, 1 on any failure or error, 2 on a
usage problem. With several suites selected, JSON output is an array with
one report object per suite.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import harness
from .suites import SHIPPED_FAULTS, SUITE_ORDER, SUITES, build_virtual_rig

SEED_ENV_VAR = "DOUBLE_HARNESS_SEED"  # reserved; the simulation is already deterministic


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="double-harness",
        description="Run embedded-driver test suites against simulated peripherals.",
    )
    parser.add_argument(
        "--suite",
        action="append",
        choices=list(SUITE_ORDER) + ["all"],
        help="suite to run (repeatable); default: all",
    )
    parser.add_argument(
        "--transport",
        default="virtual",
        help="'virtual' or 'serial:<path>' (serial needs a user-supplied port driver)",
    )
    parser.add_argument("--format", choices=("human", "json"), default="human")
    parser.add_argument(
        "--debug", action="store_true", help="append the interleaved transport log"
    )
    parser.add_argument(
        "--fault",
        choices=sorted(SHIPPED_FAULTS),
        help="arm one deliberate driver bug (virtual transport only)",
    )
    parser.add_argument(
        "--timeout-ms", type=int, default=5000, help="per-command response budget"
    )
    return parser


def _usage_error(parser: argparse.ArgumentParser, message: str) -> int:
    print(f"{parser.prog}: error: {message}", file=sys.stderr)
    return 2


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    _ = os.environ.get(SEED_ENV_VAR)  # reserved for future stochastic doubles

    selected = args.suite or ["all"]
    names: list[str] = []
    for name in selected:
        if name == "all":
            names.extend(n for n in SUITE_ORDER if n not in names)
        elif name not in names:
            names.append(name)

    if args.timeout_ms < 1:
        return _usage_error(parser, "--timeout-ms must be >= 1")

    if args.transport != "virtual":
        if not args.transport.startswith("serial:"):
            return _usage_error(parser, f"unknown transport {args.transport!r}")
        if args.fault:
            return _usage_error(parser, "--fault is only available on the virtual transport")
        path = args.transport.split(":", 1)[1]
        if not path:
            return _usage_error(parser, "serial transport requires a path: serial:<path>")
        return _usage_error(
            parser,
            "no serial port driver is bundled; plug a SerialPortLike into "
            "double_harness.transport.SerialEndpoint",
        )

    rig = build_virtual_rig(fault=args.fault, timeout_ms=args.timeout_ms)
    options = harness.RunOptions(timeout_ms=args.timeout_ms)
    all_pass = True
    json_docs = []
    human_chunks = []
    try:
        for name in names:
            suite = SUITES[name]
            results = harness.run_suite(suite, rig.session, options)
            counts = harness.summarize(results)
            all_pass = all_pass and counts["failed"] == 0 and counts["errors"] == 0
            if args.format == "json":
                json_docs.append(harness.suite_report_dict(name, results))
            else:
                human_chunks.append(
                    harness.report(results, format="human", suite_name=name)
                )
    finally:
        rig.close()

    if args.format == "json":
        print(json.dumps(json_docs, indent=2))
    else:
        if args.debug:
            # One combined log at the end; both devices, chronological.
            human_chunks.append("--- transport log ---\n" + rig.session.log.render())
        print("\n\n".join(human_chunks))
    return 0 if all_pass else 1


if __name__ == "__main__":
    sys.exit(main())
