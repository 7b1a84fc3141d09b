#!/usr/bin/env python3
"""
main.py – Command-line entry point of the pulse-sequence dephasing simulator
----------------------------------------------------------------------------
Subcommands

    simulate     coherence curves P₂(τ_Total) for the configured sequence
    scan-pulses  coherence time and intermediate slope per n_π, plus the
                 limiting-rate fit a + b/(n_π - c)
    calibrate    bisect a noise knob until the echo coherence time hits a target
    overlap      dump the ⟨n′|n⟩ overlap matrix as CSV
    fit          refit a stored summary CSV

Typical invocation:

    python main.py simulate --config data/echo_scan.json
    python main.py calibrate --config data/echo_scan.json --target 26ms
    python main.py overlap --eta 0.01 --n 40 --output overlap.csv

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import pathlib
import sys
from typing import List, Optional

from config import CALIBRATION_PARAMETERS, ExperimentConfig, load_config, parse_time
from errors import ConfigError, NumericalError
from experiments import run_calibrate, run_fit, run_overlap, run_scan_pulses, run_simulate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


# -----------------------------------------------------------------------------
# Argument parsing helpers
# -----------------------------------------------------------------------------
def _time_arg(text: str) -> float:
    try:
        return parse_time(text, "time")
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=pathlib.Path, required=True,
                   help="JSON experiment config (or a run manifest to reproduce).")
    p.add_argument("--output-dir", type=pathlib.Path, default=None,
                   help="Override output.directory of the config.")


def _build_arg_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        description="Ramsey / echo / multiple-π dephasing simulator for trapped atoms."
    )
    p.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Python logging verbosity.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Write coherence curves for the configured sequence.")
    _add_config_args(sim)

    scan = sub.add_parser("scan-pulses", help="Coherence time and slope per n_pi, plus the fit.")
    _add_config_args(scan)

    cal = sub.add_parser("calibrate", help="Calibrate a noise knob to an echo coherence time.")
    _add_config_args(cal)
    cal.add_argument("--target", type=_time_arg, default=None,
                     help="Target echo coherence time, e.g. 26ms.")
    cal.add_argument("--parameter", choices=CALIBRATION_PARAMETERS, default=None,
                     help="Noise knob to tune.")
    cal.add_argument("--lower", type=float, default=None, help="Lower end of the bracket.")
    cal.add_argument("--upper", type=float, default=None, help="Upper end of the bracket.")

    ov = sub.add_parser("overlap", help="Dump the overlap matrix <n'|n> as CSV.")
    ov.add_argument("--eta", type=float, required=True, help="Differential factor η.")
    ov.add_argument("--n", type=int, required=True, help="Basis size N.")
    ov.add_argument("--output", type=pathlib.Path, required=True, help="CSV file to write.")

    fit = sub.add_parser("fit", help="Fit a + b/(n_pi - c) to a summary CSV.")
    fit.add_argument("summary", type=pathlib.Path, help="Summary CSV from scan-pulses.")
    fit.add_argument("--output", type=pathlib.Path, default=None,
                     help="Result JSON (default: next to the summary).")
    return p


def _load(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config)
    changes = {}
    if args.output_dir is not None:
        changes["output"] = dataclasses.replace(cfg.output, directory=str(args.output_dir))
    if getattr(args, "lower", None) is not None or getattr(args, "upper", None) is not None:
        changes["calibration"] = dataclasses.replace(
            cfg.calibration,
            lower=args.lower if args.lower is not None else cfg.calibration.lower,
            upper=args.upper if args.upper is not None else cfg.calibration.upper,
        )
    return dataclasses.replace(cfg, **changes) if changes else cfg


# -----------------------------------------------------------------------------
# Main driver
# -----------------------------------------------------------------------------
def run(args: argparse.Namespace) -> None:
    if args.command == "simulate":
        run_simulate(_load(args))
    elif args.command == "scan-pulses":
        run_scan_pulses(_load(args))
    elif args.command == "calibrate":
        run_calibrate(_load(args), args.target, args.parameter)
    elif args.command == "overlap":
        if args.n < 1:
            raise ConfigError(f"--n must be >= 1, got {args.n}", source="command line")
        try:
            run_overlap(args.eta, args.n, args.output)
        except ValueError as exc:
            raise ConfigError(str(exc), source="command line") from None
    elif args.command == "fit":
        run_fit(args.summary, args.output)


def main(argv: Optional[List[str]] = None) -> int:
    args = _build_arg_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="[%(levelname)s] %(message)s",
    )
    try:
        run(args)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except NumericalError as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_IO
    except ValueError as exc:
        logger.error("invalid input: %s", exc)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
