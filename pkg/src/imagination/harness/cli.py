"""Command-line entry point.

    imagination calibrate --seed 0 --scale desk --out runs/cal
    imagination fidelity --regime bounded --sigma0 1 --cmax 2
    imagination accept

Exit codes: 0 success, 2 configuration error, 3 acceptance failure,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .acceptance import run_acceptance
from .config import EXPERIMENTS, SCALES, ConfigError, load_config
from .experiments import RUNNERS, jsonable_summary
from .io import write_manifest

EXIT_OK, EXIT_CONFIG, EXIT_ACCEPT, EXIT_NUMERIC = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="base seed (default 0)")
    common.add_argument("--scale", choices=SCALES, help="desk (default) or paper")
    common.add_argument("--out", help="output directory (default runs/<experiment>)")
    common.add_argument("--workers", type=int, help="worker processes (default 1)")
    common.add_argument("--config", help="TOML config file")

    parser = argparse.ArgumentParser(prog="imagination", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, parents=[common])
        if name == "fidelity":
            p.add_argument("--regime", choices=("all", "power_law", "bounded", "floor"))
            p.add_argument("--sigma0", type=float, help="noise standard deviation at zero cost (bounded regime)")
            p.add_argument("--cmax", type=float, help="cost at which noise vanishes (bounded regime)")
            p.add_argument("--p", type=float, help="power-law exponent")
            p.add_argument("--a", type=float, help="power-law / floor amplitude")
            p.add_argument("--sigma-floor", type=float, help="irreducible noise standard deviation")
        if name == "accept":
            p.add_argument("--only", type=int, nargs="*", help="criterion numbers to run")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    tree: dict = {"experiment": args.experiment}
    for key, dest in (("seed", "seed"), ("scale", "scale"), ("output_dir", "out"), ("workers", "workers")):
        if getattr(args, dest, None) is not None:
            tree[key] = getattr(args, dest)
    if args.experiment == "fidelity":
        block = {
            k: getattr(args, d)
            for k, d in (("regime", "regime"), ("sigma0", "sigma0"), ("cmax", "cmax"), ("p", "p"), ("a", "a"), ("sigma_floor", "sigma_floor"))
            if getattr(args, d) is not None
        }
        if block:
            tree["fidelity"] = block
    if getattr(args, "out", None) is None:
        tree.pop("output_dir", None)
    return tree


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if cfg.experiment == "accept":
        results = run_acceptance(cfg, set(args.only) if args.only else None)
        failed = [r for r in results if not r.passed]
        print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
        return EXIT_ACCEPT if failed else EXIT_OK

    out = Path(args.out) if args.out else Path(cfg.output_dir) / cfg.experiment
    out.mkdir(parents=True, exist_ok=True)
    try:
        with np.errstate(divide="raise", invalid="raise", over="raise"):
            summary, outputs = RUNNERS[cfg.experiment](cfg, out)
    except (FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        write_manifest(out / "manifest.json", cfg.to_dict(), {}, status="error", error=repr(exc), traceback=traceback.format_exc())
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_manifest(out / "manifest.json", cfg.to_dict(), outputs, status="ok", summary=jsonable_summary(summary))
    for line in _summary_lines(summary):
        print(line)
    print(f"wrote {', '.join(sorted(outputs))} and manifest.json to {out}")
    return EXIT_OK


def _summary_lines(summary: dict, prefix: str = "") -> list[str]:
    lines = []
    for k, v in summary.items():
        if isinstance(v, dict):
            lines += _summary_lines(v, f"{prefix}{k}.")
        else:
            lines.append(f"{prefix}{k} = {v}")
    return lines


if __name__ == "__main__":
    sys.exit(main())
