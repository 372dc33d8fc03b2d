"""Command-line entry point for the benchmark driver.

Precedence: preset defaults < config file keys < command-line flags.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .adaptation import POLICY_KINDS
from .bench import (
    EXIT_ERROR,
    PRESETS,
    PROBLEM_KINDS,
    config_from_items,
    read_config_file,
    run_experiment,
)
from .datagen import PARTITION_MODES
from .errors import InvalidInputError, ParseError


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="acadmm-bench",
        description="Distributed consensus ADMM benchmark runner",
    )
    p.add_argument("--config", help="flat key=value config file (flags override)")
    p.add_argument("--preset", choices=sorted(PRESETS), help="desk-scale benchmark preset")
    p.add_argument("--problem", choices=PROBLEM_KINDS)
    p.add_argument("--data", help="LIBSVM data file (overrides the generator)")
    p.add_argument("--gen", choices=("synthetic1", "synthetic2"))
    p.add_argument("--samples", type=int)
    p.add_argument("--features", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--partition", choices=PARTITION_MODES)
    p.add_argument("--policy", choices=POLICY_KINDS)
    p.add_argument("--tau0", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--maxiter", type=int)
    p.add_argument("--rho1", type=float)
    p.add_argument("--rho2", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--svm-c", dest="svm_c", type=float)
    p.add_argument("--tf", type=int, help="adaptation period")
    p.add_argument("--eps-cor", dest="eps_cor", type=float)
    p.add_argument("--c-cg", dest="c_cg", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--metrics", help="metrics output base path (.csv and .jsonl)")
    p.add_argument("--summary", help="summary JSON output path")
    p.add_argument("--mode", choices=("sequential", "parallel-threads"))
    p.add_argument("--threads", type=int)
    p.add_argument("--no-wall-clock", action="store_true",
                   help="write wall_ms as 0.0 so metrics files are bit-reproducible")
    p.add_argument("--compare", action="store_true",
                   help="run all five policies and print an iterations/seconds table")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    items: dict = {}
    try:
        if args.preset:
            items.update(PRESETS[args.preset])
        if args.config:
            items.update(read_config_file(args.config))
        for key, value in vars(args).items():
            if key in ("config", "preset", "no_wall_clock"):
                continue
            if key == "compare":
                if value:
                    items["compare"] = True
                continue
            if value is not None:
                items[key] = value
        if args.no_wall_clock:
            items["wall_clock"] = False
        cfg = config_from_items(items)
    except (InvalidInputError, ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    code, _ = run_experiment(cfg)
    return code


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
