"""Command-line entry point.

skwsim validate     --config c.json
skwsim equivalence  --config c.json [--seed N] [--out DIR] [--threads N]
skwsim contraction  --config c.json ...
skwsim limit-sweep  --config c.json ...
skwsim transport    --config c.json ...
skwsim report RUN_DIR [RUN_DIR ...] [--out DIR]

Thread count falls back to the SKWSIM_THREADS environment variable,
then to 1.  Commands that simulate refuse configurations violating the
standing assumptions unless --allow-nonconforming is given; validate
always reports and exits by the check alone.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, load_config
from .experiments import (
    GateError,
    check_gate,
    run_contraction,
    run_equivalence,
    run_limit_sweep,
    run_report,
    run_transport,
    run_validate,
    write_manifest,
)

_DRIVERS = {
    "equivalence": (run_equivalence, ["equivalence.csv"]),
    "contraction": (run_contraction, ["contraction.csv", "contraction_fit.csv"]),
    "limit-sweep": (run_limit_sweep, ["sweep.csv", "sweep_integrals.csv"]),
    "transport": (run_transport, ["transport.csv", "moments.csv", "transport_plan.csv"]),
}

_HEADLINES = {
    "equivalence": ("ratio", "sup_gap_coarse", "sup_gap_fine"),
    "contraction": ("lambda_hat", "r_squared"),
    "limit-sweep": ("slope", "monotone"),
    "transport": ("pilot_lambda", "w1_monotone", "phi_ratio", "phi_trend_rho"),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skwsim",
        description="numerical laboratory for the small-mass limit of a "
        "stochastic damped wave equation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON experiment configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument(
            "--threads",
            type=int,
            default=None,
            help="worker threads (default: SKWSIM_THREADS or 1)",
        )
        p.add_argument(
            "--allow-nonconforming",
            action="store_true",
            help="run even if the configuration fails the hypothesis checks",
        )

    common(sub.add_parser("validate", help="check the standing assumptions"))
    common(sub.add_parser("equivalence", help="coupled two-form runs at dt and dt/2"))
    common(sub.add_parser("contraction", help="coupling decay rate of the limit"))
    common(sub.add_parser("limit-sweep", help="wave-to-limit gap across masses"))
    common(sub.add_parser("transport", help="stationary marginals and W1 tables"))

    rp = sub.add_parser("report", help="collate runs: verify, refit, render figures")
    rp.add_argument("runs", nargs="+", help="run directories holding manifest.json")
    rp.add_argument("--out", default=None, help="output directory")
    return parser


def _resolve_threads(value: int | None) -> int:
    if value is not None:
        return max(1, value)
    env = os.environ.get("SKWSIM_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            print(f"skwsim: ignoring SKWSIM_THREADS={env!r}", file=sys.stderr)
    return 1


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "report":
        out = args.out or os.path.join("runs", "report")
        os.makedirs(out, exist_ok=True)
        results = run_report(args.runs, out)
        for name, entry in results["inputs"].items():
            status = "ok" if entry.get("verified") else "NOT VERIFIED"
            print(f"{name}: {status}")
            for problem in entry.get("problems", []):
                print(f"  - {problem}")
        print(f"report written to {out}")
        return 0 if results["inputs_verified"] else 1

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for line, msg in exc.errors:
            print(f"{exc.path}:{line}: {msg}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"skwsim: cannot read config: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        lines, ok = run_validate(cfg)
        print("\n".join(lines))
        return 0 if ok else 1

    seed = args.seed if args.seed is not None else cfg.seed
    threads = _resolve_threads(args.threads)
    try:
        gate = check_gate(cfg, args.allow_nonconforming)
    except GateError as exc:
        for name, value in exc.report.rows():
            print(f"{name:>16}  {value}", file=sys.stderr)
        print(
            "skwsim: configuration fails the hypothesis checks; "
            "pass --allow-nonconforming to run anyway",
            file=sys.stderr,
        )
        return 1

    driver, tables = _DRIVERS[args.command]
    out = args.out or cfg.out_dir or os.path.join("runs", args.command)
    os.makedirs(out, exist_ok=True)
    results = driver(cfg, out, seed, threads)
    write_manifest(out, args.command, cfg, seed, threads, results, tables, gate=gate)
    for key in _HEADLINES[args.command]:
        print(f"{key}: {results[key]}")
    print(f"outputs written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
