"""Command-line entry point: ``lattice-scatter run`` and ``lattice-scatter presets``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Optional, Sequence

from . import __version__
from .lattice_model import preset, preset_names

log = logging.getLogger("lattice_scatter")

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _set_threads(n: int) -> None:
    # BLAS pools are sized at import; the runner handles experiment-level concurrency.
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lattice-scatter",
                                     description="Long-range lattice scattering experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiments of a JSON config")
    run.add_argument("--config", required=True, help="path to the JSON configuration")
    run.add_argument("--out", default=None, help="output directory (overrides the config)")
    run.add_argument("--seed", type=int, default=None, help="random seed (overrides the config)")
    run.add_argument("--threads", type=int, default=1, help="concurrent experiments")
    run.add_argument("--no-cache", action="store_true", help="do not read or write the artifact cache")

    pre = sub.add_parser("presets", help="list the lattice presets")
    pre.add_argument("--json", action="store_true", help="print the hopping kernels as JSON")
    return parser


def _cmd_presets(args) -> int:
    if args.json:
        print(json.dumps({name: preset(name).to_dict() for name in preset_names()}, indent=2))
    else:
        for name in preset_names():
            k = preset(name)
            print(f"{name:12s} d={k.d} n={k.n} range={k.support_radius}")
    return EXIT_PASS


def _cmd_run(args) -> int:
    from .runner import ConfigError, ExperimentError, parse_config, run_experiments

    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        doc = run_experiments(cfg, out=args.out, seed=args.seed, threads=args.threads, cache=not args.no_cache)
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    for name, res in doc["experiments"].items():
        status = "PASS" if res["passed"] else "FAIL"
        detail = res.get("error") or ", ".join(f"{k}={'ok' if f['pass'] else 'fail'}" for k, f in res["flags"].items())
        print(f"{status} {name}: {detail}")
    for name, err in doc["artifact_errors"].items():
        print(f"ERROR artifact {name}: {err}", file=sys.stderr)
    return EXIT_PASS if doc["passed"] else EXIT_FAIL


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.command == "presets":
        return _cmd_presets(args)
    _set_threads(args.threads)
    return _cmd_run(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
