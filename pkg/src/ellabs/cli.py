"""Command-line entry point.

Runs a problem file end to end (build, simulate, export, render), or one of
the two study modes: a single local transition, or a sweep of the cost/volume
weight for a Pareto curve.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .pipeline import EXIT_INPUT, Flags, run_pipeline


def _parse_sweep(text: str) -> list:
    if text.strip() == "":
        return []
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad sweep list {text!r}: {exc}") from exc


def _parse_tol(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {pair!r}")
        key, val = pair.split("=", 1)
        out[key.strip()] = float(val)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ellabs",
        description="Certified ellipsoidal-abstraction controller synthesis.")
    parser.add_argument("problem", type=Path, help="problem file (JSON)")
    parser.add_argument("--out-dir", type=Path, default=Path("out"),
                        help="directory for all artifacts (default: ./out)")
    parser.add_argument("--seed", type=int, default=None, help="override the RNG seed")
    parser.add_argument("--max-iters", type=int, default=None,
                        help="override the sampling-iteration cap")
    parser.add_argument("--improve-budget", type=int, default=None,
                        help="extra refinement iterations after first coverage")
    parser.add_argument("--lambda", dest="lam", type=float, default=None,
                        help="override the cost/volume weight in [0, 1]")
    parser.add_argument("--single-transition", action="store_true",
                        help="solve only the problem file's 'transition' section")
    parser.add_argument("--sweep", type=_parse_sweep, default=None, metavar="L1,L2,...",
                        help="solve the transition for each weight; writes pareto.csv")
    parser.add_argument("--trajectories", type=int, default=None, metavar="N",
                        help="number of simulated trajectories to export")
    parser.add_argument("--grid-res", type=int, default=None, metavar="R",
                        help="value-grid points per axis")
    parser.add_argument("--dump-sdp", action="store_true",
                        help="write a text dump of every assembled conic program")
    parser.add_argument("--no-figures", action="store_true",
                        help="skip PNG rendering; keep delimited exports only")
    parser.add_argument("--tol", action="append", metavar="KEY=VALUE",
                        help="override a numeric tolerance (repeatable)")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        tols = _parse_tol(args.tol)
    except argparse.ArgumentTypeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    flags = Flags(
        out_dir=args.out_dir,
        seed=args.seed,
        max_iters=args.max_iters,
        improve_budget=args.improve_budget,
        lam=args.lam,
        trajectories=args.trajectories,
        grid_res=args.grid_res,
        dump_sdp=args.dump_sdp,
        single_transition=args.single_transition,
        sweep=args.sweep,
        figures=not args.no_figures,
        tol_overrides=tols,
    )
    return run_pipeline(args.problem, flags)


if __name__ == "__main__":
    sys.exit(main())
