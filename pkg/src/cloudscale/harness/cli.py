"""Command-line entry point.

Exit status is 0 on success, 1 when the config or an input file fails
validation and 2 on any other runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from ..simcluster import TraceValidationError
from .config import ConfigError, load_config
from .runner import compare_policies, run_scenario, train_command
from .trace_convert import TIME_UNITS, convert_trace

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("cloudscale")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="output directory (default: the config's output_dir)")
    p.add_argument("--event-log", action="store_true", help="write per-request events as JSON lines")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="cloudscale", description="Inference-cluster simulator and policy harness.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run one policy bundle")
    p.add_argument("config")
    p.add_argument("--policy", default=None, help="bundle name (default: first listed)")

    p = sub.add_parser("train", parents=[common], help="train the load-balancing agent")
    p.add_argument("config")
    p.add_argument("--resume", action="store_true", help="continue from agent_last.json in the output dir")

    p = sub.add_parser("compare", parents=[common], help="run every bundle on the same arrivals")
    p.add_argument("config")

    p = sub.add_parser("trace-convert", parents=[common], help="convert a task-event CSV to the trace schema")
    p.add_argument("src")
    p.add_argument("dst")
    p.add_argument("--time-col", default="time")
    p.add_argument("--cpu-col", default="cpu_request")
    p.add_argument("--duration-col", default="duration")
    p.add_argument("--end-col", default=None, help="derive durations as end - time")
    p.add_argument("--time-unit", choices=sorted(TIME_UNITS), default="s")
    p.add_argument("--no-rebase", action="store_true", help="keep absolute timestamps")
    return parser


def _run(args) -> dict:
    if args.command == "trace-convert":
        rep = convert_trace(args.src, args.dst, args.time_col, args.cpu_col, args.duration_col,
                            args.end_col, args.time_unit, rebase=not args.no_rebase)
        return {"rows_in": rep.rows_in, "rows_out": rep.rows_out, "skipped": len(rep.skipped), "output": args.dst}

    cfg = load_config(args.config, seed=args.seed)
    if args.command == "simulate":
        res = run_scenario(cfg, args.out, args.policy, args.event_log)
        return res.summary.headline()
    if args.command == "train":
        return train_command(cfg, args.out, resume=args.resume)
    comp = compare_policies(cfg, args.out, args.event_log)
    return {"summary": comp.table, "outputs": {k: str(v) for k, v in comp.paths.items()}}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = _run(args)
    except (ConfigError, TraceValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - reported, mapped to the runtime exit code
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
