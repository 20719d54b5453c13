"""Command-line entry point.

Subcommands::

    fedecado run <cfg> [--out DIR]
    fedecado sweep <cfg> [--out DIR]
    fedecado rlc-demo --L <v> [--k 10] [--x0 1] [--v0 0] [--horizon 5] [--samples 501]
    fedecado partition-stats <cfg>

Exit codes: 0 success, 2 diverged run, 1 error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from .harness import parse_config, partition_report, run_experiment, sweep
from .sensitivity import simulate_rlc

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DIVERGED = 2


def _out_dir(cfg, override: Optional[str]) -> Path:
    if override:
        return Path(override)
    out = cfg.output_dir()
    return out if out is not None else Path("fedecado_out")


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    out = _out_dir(cfg, args.out)
    outcome = run_experiment(cfg, out)
    print(json.dumps(outcome.summary))
    return EXIT_DIVERGED if outcome.summary["diverged"] else EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = parse_config(args.config)
    out = _out_dir(cfg, args.out)
    table = sweep(cfg, out)
    for row in table["rows"]:
        print(json.dumps(row))
    print(json.dumps({"param": table["param"], "usable_rate": table["usable_rate"],
                      "usable_threshold": table["usable_threshold"]}))
    return EXIT_ERROR if all(r["error"] for r in table["rows"]) else EXIT_OK


def _cmd_rlc(args) -> int:
    t, x = simulate_rlc(args.L, args.k, args.x0, args.v0, args.horizon, args.samples)
    lines = ["t,x"] + [f"{ti!r},{xi!r}" for ti, xi in zip(t.tolist(), x.tolist())]
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def _cmd_partition(args) -> int:
    cfg = parse_config(args.config)
    for row in partition_report(cfg):
        print(json.dumps(row))
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1; status 2 is reserved for diverged runs
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="fedecado", description="Adaptive FedECADO simulator")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run one experiment, write rounds.jsonl and summary.json")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: config 'output' or <cfg>_out)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="run the config's sweep and report the usable rate")
    p.add_argument("config")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("rlc-demo", help="closed-form x'' + L x' + k x = 0 as CSV t,x")
    p.add_argument("--L", type=float, required=True)
    p.add_argument("--k", type=float, default=10.0)
    p.add_argument("--x0", type=float, default=1.0)
    p.add_argument("--v0", type=float, default=0.0)
    p.add_argument("--horizon", type=float, default=5.0)
    p.add_argument("--samples", type=int, default=501)
    p.set_defaults(func=_cmd_rlc)

    p = sub.add_parser("partition-stats", help="per-client sizes and class histograms")
    p.add_argument("config")
    p.set_defaults(func=_cmd_partition)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, ArithmeticError) as exc:
        print(f"fedecado: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
