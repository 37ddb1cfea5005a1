"""Command-line entry point: flag-selected batch experiments.

One process per run; every run writes metrics.csv and a manifest.json that
reproduces it bit-identically (pass the manifest back via --config-file).
Machine-readable output only; figures belong to the plots package.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .engine import MODE_EVENT, MODE_TIME, VARIANT_BSSHSLM, VARIANT_EPROP_PLUS
from .io import read_manifest
from .runs import TASK_SCALING, TASKS, RunSpec, default_spec, execute

DATASET_ENV = "EPROPSIM_NMNIST_PATH"


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=[MODE_TIME, MODE_EVENT], default=None)
    p.add_argument("--variant", choices=[VARIANT_BSSHSLM, VARIANT_EPROP_PLUS], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--optimizer", choices=["gd", "adam"], default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--surrogate", choices=["piecewise-linear", "exponential", "fast-sigmoid", "arctan"], default=None)
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--eval-samples", type=int, default=None)
    p.add_argument("--workers", type=str, default=None, help="worker count, or comma list for scaling")
    p.add_argument("--output-dir", type=str, default=None)
    p.add_argument("--dataset-path", type=str, default=None)
    p.add_argument("--config-file", type=str, default=None,
                   help="manifest.json or spec JSON; explicit flags override it")
    p.add_argument("--record-raster", action="store_true")
    p.add_argument("--dump-weights", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epropsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for task in TASKS:
        p = sub.add_parser(task, help=f"run the {task} experiment")
        _add_common(p)
    sub.add_parser("verify", help="run the oracle-equivalence self-checks")
    return parser


_DEFAULT_ITERATIONS = {"pattern-generation": 300, "evidence-accumulation": 150,
                       "nmnist": 200, "scaling": 1}


def spec_from_args(args: argparse.Namespace) -> RunSpec:
    task = args.command
    if args.config_file:
        spec = RunSpec.from_dict(read_manifest(args.config_file))
        if spec.task != task:
            raise SystemExit(f"config file describes task {spec.task!r}, not {task!r}")
    else:
        variant = args.variant or VARIANT_BSSHSLM
        spec = default_spec(task, variant=variant)
        spec.iterations = _DEFAULT_ITERATIONS[task]
    if args.variant and not args.config_file and spec.variant != args.variant:
        spec = default_spec(task, variant=args.variant)
        spec.iterations = _DEFAULT_ITERATIONS[task]
    if args.mode:
        spec.mode = args.mode
    if args.seed is not None:
        spec.seed = args.seed
    if args.iterations is not None:
        spec.iterations = args.iterations
    if args.eval_every is not None:
        spec.eval_every = args.eval_every
    if args.eval_samples is not None:
        spec.eval_samples = args.eval_samples
    if args.batch_size is not None and task != TASK_SCALING:
        spec.network["opt"]["batch_size"] = args.batch_size
    if args.optimizer is not None and task != TASK_SCALING:
        spec.network["opt"]["kind"] = args.optimizer
    if args.eta is not None and task != TASK_SCALING:
        spec.network["opt"]["eta"] = args.eta
    if args.surrogate is not None and task != TASK_SCALING:
        spec.network["lif"]["surrogate"]["kind"] = args.surrogate
    if args.workers:
        if task == TASK_SCALING:
            spec.task_params["workers_list"] = [int(w) for w in args.workers.split(",")]
        else:
            spec.workers = int(args.workers)
    spec.record_raster = bool(args.record_raster) or spec.record_raster
    spec.dump_weights = bool(args.dump_weights) or spec.dump_weights
    dataset = args.dataset_path or os.environ.get(DATASET_ENV)
    if dataset:
        spec.dataset_path = dataset
    return spec


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "verify":
        from .verify import run_all

        return 0 if run_all(verbose=True) else 1
    try:
        spec = spec_from_args(args)
        out_dir = Path(args.output_dir or f"runs/{spec.task}-{spec.variant}-{spec.mode}-seed{spec.seed}")
        rows = execute(spec, out_dir)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    last = rows[-1] if rows else None
    if last is not None:
        err = "" if last.prediction_error is None else f" prediction_error={last.prediction_error:.3f}"
        print(f"wrote {out_dir}/metrics.csv ({len(rows)} rows); final loss={last.loss:.6g}{err}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
