"""Command-line entry point: ``polycv run | sweep | bench-list``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .applications.benchmarks import benchmark_suite
from .applications.transmittance import media
from .experiment import ConfigError, ExperimentConfig, run_experiment, sweep_allocation, write_csv, write_outputs, write_sweep


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polycv", description="Adaptive polynomial control variates for Monte Carlo integration.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment INI file")
        p.add_argument("--seed", type=int, help="override [experiment] seed")
        p.add_argument("--runs", type=int, help="override [experiment] runs")
        p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        p.add_argument("--out-csv", help="override [output] csv")
        p.add_argument("-v", "--verbose", action="store_true")

    run = sub.add_parser("run", help="run replicated experiments and write CSV (and PFM in bucketed mode)")
    common(run)
    run.add_argument("--out-image", help="override [output] image (bucketed mode)")

    sweep = sub.add_parser("sweep", help="CV-vs-residual allocation sweep; writes error/cost/efficiency matrices")
    common(sweep)

    sub.add_parser("bench-list", help="list benchmark integrands and media")
    return parser


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.runs is not None:
        overrides["runs"] = args.runs
    if args.out_csv:
        overrides["csv"] = args.out_csv
    if getattr(args, "out_image", None):
        overrides["image"] = args.out_image
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _bench_list() -> None:
    print(f"{'name':<20} {'dim':>3}  {'reference':>22}  notes")
    for b in benchmark_suite():
        extra = f"cv_dims={b.cv_dims}" if b.cv_dims else ""
        print(f"{b.name:<20} {b.dim:>3}  {b.reference:>22.15g}  {extra}")
    print(f"{'single-scattering':<20} {1:>3}  {'(Simpson oracle)':>22}  mapping=equiangular|uniform|mis")
    print()
    print("media (mode = transmittance): " + ", ".join(media()))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "bench-list":
            _bench_list()
            return 0
        cfg = _load(args)
        if args.command == "run":
            result = run_experiment(cfg, threads=args.threads)
            paths = write_outputs(result)
            if not paths:
                write_csv(result.rows, sys.stdout)
            for p in paths:
                print(f"wrote {p}", file=sys.stderr)
            return 0
        result = sweep_allocation(cfg)
        prefix = cfg.csv or "sweep"
        for p in write_sweep(result, prefix):
            print(f"wrote {p}", file=sys.stderr)
        i, j = result.best
        print(
            f"most efficient cell: n_cv={int(result.cv_evals[j])} n_res={result.residual_axis[i]} "
            f"cv fraction {result.best_ratio:.3f} (reference allocation 0.333)"
        )
        return 0
    except (ConfigError, KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"polycv: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
