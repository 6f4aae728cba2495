"""Command line: ``trapmodel run <experiment> --config f.json`` and ``trapmodel list``.

Exit codes: 0 all tolerances met, 1 statistical failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trapmodel", description="Trap model experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("experiment")
    r.add_argument("--config", help="JSON config; defaults to the bundled one")
    r.add_argument("--seed", type=int, help="override master_seed")
    r.add_argument("--threads", type=int, help="numba thread budget")
    r.add_argument("--out", help="output directory (default: runs)")
    sub.add_parser("list", help="list experiments and their parameters")
    return ap


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    if getattr(args, "threads", None) is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        # must happen before numba is first imported
        os.environ["NUMBA_NUM_THREADS"] = str(args.threads)

    from .errors import CapacityError, ParameterError, PreconditionError, RegionError
    from .experiments import REGISTRY, ExperimentConfig, bundled_config, run

    if args.command == "list":
        for name, spec in REGISTRY.items():
            print(f"{name}: {spec.description}")
            print(f"    parameters: {json.dumps(spec.defaults)}")
        return EXIT_OK

    try:
        if args.config:
            cfg = ExperimentConfig.from_file(args.config, master_seed=args.seed, threads=args.threads,
                                             out=args.out)
        else:
            if args.experiment not in REGISTRY:
                raise ParameterError(f"unknown experiment {args.experiment!r}; see `list`")
            raw = bundled_config(args.experiment)
            raw.update({k: v for k, v in {"master_seed": args.seed, "threads": args.threads,
                                          "out": args.out}.items() if v is not None})
            cfg = ExperimentConfig(**raw)
        if cfg.experiment != args.experiment:
            raise ParameterError(f"config is for {cfg.experiment!r}, not {args.experiment!r}")
        cfg.resolved()
    except (ParameterError, OSError, json.JSONDecodeError, TypeError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE

    try:
        report = run(cfg)
    except CapacityError as e:
        print(f"capacity error: {e}. Lower n, m or the replica count.", file=sys.stderr)
        return EXIT_USAGE
    except (ParameterError, PreconditionError, RegionError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    for c in report.checks:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.value:.6g} (target {c.target}, {c.tolerance})")
    print(f"{'PASSED' if report.passed else 'FAILED'} in {report.wall_clock:.1f} s; "
          f"report in {cfg.out}/{cfg.experiment}/report.json")
    return EXIT_OK if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
