"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 failed validation.
"""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from .harness import KINDS, ExperimentSpec, RunReport, run_batch, run_experiment
from .params import ConfigError

log = logging.getLogger("vimseq")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vimseq", description="Sequential movement optimisation on a variable impedance joint.")
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind)
        p.add_argument("--config", default=None, help="JSON config overlaid on the defaults")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=f"runs/{kind}")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        if kind not in ("frontier", "validate"):
            p.add_argument("--repeat", type=int, default=1, metavar="N",
                           help="run N consecutive seeds and write mean/std learning curves")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = ExperimentSpec.from_file(args.kind, args.config, args.out, args.seed, args.jobs)
        repeat = getattr(args, "repeat", 1)
        result = run_batch(spec, repeat) if repeat > 1 else run_experiment(spec)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    if args.kind == "validate":
        for c in result:
            print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.value:.3g} (threshold {c.threshold:g})")
        return 0 if all(c.passed for c in result) else 2
    if isinstance(result, list) and result and isinstance(result[0], RunReport):
        red = np.array([r.energy_reduction for r in result])
        print(f"{args.kind}: {len(result)} seeds, E_in reduction "
              f"{100 * red.mean():.1f}% +- {100 * red.std(ddof=1):.1f}%")
    elif isinstance(result, RunReport):
        print(f"{args.kind}: J_e {result.baseline.J_e:.6g} -> {result.final.J_e:.6g}, "
              f"E_in {result.baseline.E_in:.6g} -> {result.final.E_in:.6g} "
              f"({100 * result.energy_reduction:.1f}% less)")
    else:
        print(f"frontier: {len(result)} rows written to {spec.out}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
