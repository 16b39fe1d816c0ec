"""Command-line interface.

Verbs: run, plot, diagnose-precision, phase, write-config.
Exit codes: 0 ok, 2 configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, default_config_text, load_config
from .propagator import NumericalAbort

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ciphase",
        description=(
            "Two-state vibronic dynamics near a conical intersection with "
            "geometric-phase and electromotive-force diagnostics"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="propagate a configured run into an output directory")
    p_run.add_argument("config", help="path to the run config (key=value sections)")
    p_run.add_argument("--out", required=True, help="output run directory")
    p_run.add_argument("--resume", action="store_true", help="continue from the last checkpoint")

    p_plot = sub.add_parser("plot", help="render SVG figures from a run directory")
    p_plot.add_argument("rundir", help="run directory produced by 'run'")
    p_plot.add_argument("--out", default=None, help="figure directory (default <rundir>/plots)")

    p_diag = sub.add_parser(
        "diagnose-precision", help="FFT round-trip error vs density for the initial state"
    )
    p_diag.add_argument("config", help="path to the run config")
    p_diag.add_argument("--out", required=True, help="output CSV path")
    p_diag.add_argument("--trips", type=int, default=1, help="number of FFT round trips")

    p_phase = sub.add_parser("phase", help="recompute phases from stored snapshots")
    p_phase.add_argument("rundir", help="run directory with snapshots")
    p_phase.add_argument("--radii", default=None, help="comma-separated radii override")
    p_phase.add_argument("--points", type=int, default=None, help="path points override")
    p_phase.add_argument(
        "--sampling", default=None, choices=("bilinear", "grid-snapped"), help="sampling override"
    )

    p_cfg = sub.add_parser("write-config", help="print a preset config to stdout")
    p_cfg.add_argument("--preset", default="desk", choices=("desk", "paper"))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            from .runner import run

            config = load_config(args.config)
            outdir = run(config, args.out, resume=args.resume)
            print(f"run complete: {outdir}")
        elif args.command == "plot":
            from .plotting import plot_run

            files = plot_run(args.rundir, args.out)
            for f in files:
                print(f)
        elif args.command == "diagnose-precision":
            from .runner import diagnose_precision

            config = load_config(args.config)
            out = diagnose_precision(config, args.out, trips=args.trips)
            print(out)
        elif args.command == "phase":
            from .runner import recompute_phases

            radii = (
                tuple(float(tok) for tok in args.radii.replace(",", " ").split())
                if args.radii
                else None
            )
            out = recompute_phases(args.rundir, radii=radii, n_points=args.points,
                                   sampling=args.sampling)
            print(out)
        elif args.command == "write-config":
            sys.stdout.write(default_config_text(args.preset))
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
