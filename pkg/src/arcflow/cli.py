"""Command line entry points.

    arcflow verify  [--seed N]
    arcflow distill --config PATH [--seed N] [--steps N] [--out DIR]
    arcflow ablate  [--config PATH] [--seed N] [--out DIR] [--studies a,b]
    arcflow sample  --checkpoint PATH [--config PATH] [--count N] [--nfe N]
                    [--baseline PATH] [--out DIR]

Every subcommand accepts --print-defaults, which prints the default config
text (the desk-scale reference task) and exits.  verify runs the full
invariant suites and exits nonzero if any fails; distill trains and reports
metrics; ablate runs the paired-seed studies; sample rolls trajectories from
a checkpoint and writes CSV/SVG overlays against the many-step teacher.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .distill import student_sample
from .errors import ArcFlowError
from .nnet import StudentNet
from .svg import trajectory_overlay_svg
from .teacher import euler_sample


def _load_config(args) -> harness.RunConfig:
    if getattr(args, "config", None):
        cfg = harness.load_run_config(args.config)
    else:
        cfg = harness.RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(
            cfg, distill=dataclasses.replace(cfg.distill, seed=args.seed))
    if getattr(args, "steps", None) is not None:
        cfg = dataclasses.replace(
            cfg, distill=dataclasses.replace(cfg.distill,
                                             total_steps=args.steps))
    if getattr(args, "out", None):
        cfg = dataclasses.replace(
            cfg, run=dataclasses.replace(cfg.run, out=args.out))
    return cfg


def cli_verify(args) -> int:
    from .verify import TOLERANCES, run_all_suites

    print("tolerances:")
    for name, tol in TOLERANCES.items():
        print(f"  {name}: {tol}")
    print()
    results = run_all_suites()
    for result in results:
        print(result.line())
    failed = [r for r in results if not r.passed]
    print()
    print(f"{len(results) - len(failed)}/{len(results)} suites passed")
    return 1 if failed else 0


def cli_distill(args) -> int:
    cfg = _load_config(args)
    report, _, _ = harness.run_distillation(cfg, out_dir=cfg.run.out)
    print(json.dumps(report.to_dict(), indent=2))
    print(f"artifacts in {cfg.run.out}")
    return 0


def cli_ablate(args) -> int:
    cfg = _load_config(args)
    studies = tuple(args.studies.split(",")) if args.studies \
        else harness.ABLATION_STUDIES
    seeds = tuple(int(s) for s in args.seeds.split(","))
    rows = harness.run_ablation(cfg, studies=studies, seeds=seeds)
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_ablation_csv(rows, out / "ablation.csv")
    by_cell = {}
    for study, cell, _, mse, _ in rows:
        by_cell.setdefault((study, cell), []).append(mse)
    print("study/cell medians (endpoint_mse):")
    for (study, cell), values in by_cell.items():
        print(f"  {study:12s} {cell:28s} {float(np.median(values)):.6f}")
    print(f"rows in {out / 'ablation.csv'}")
    return 0


def cli_sample(args) -> int:
    cfg = _load_config(args)
    net = StudentNet.load(args.checkpoint)
    teacher = harness.build_teacher(cfg)
    nfe = args.nfe if args.nfe is not None else cfg.distill.nfe
    count = args.count
    rng = np.random.default_rng(args.seed if args.seed is not None
                                else cfg.distill.seed)
    noise = rng.standard_normal((count, teacher.dim))
    student = student_sample(net, noise, nfe, cfg.run.dense_per_shelf)
    reference = euler_sample(teacher.velocity, noise, 200)
    out = Path(args.out if args.out else cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_trajectory_csv(student, out / "student_trajectories.csv")
    harness.write_trajectory_csv(reference, out / "teacher_trajectories.csv")
    records = [("teacher_200", "#888888", reference)]
    if args.baseline:
        base_net = StudentNet.load(args.baseline)
        baseline = student_sample(base_net, noise, nfe,
                                  cfg.run.dense_per_shelf)
        harness.write_trajectory_csv(baseline,
                                     out / "baseline_trajectories.csv")
        records.append((f"linear_{nfe}", "#d97706", baseline))
    records.append((f"student_{nfe}", "#1f6fd6", student))
    spec = cfg.teacher.build_spec()
    trajectory_overlay_svg(records, out / "overlay.svg", means=spec.means,
                           limit=count)
    print(f"wrote {count} trajectories to {out}")
    return 0


def _add_common(parser):
    parser.add_argument("--config", help="run config file")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--print-defaults", action="store_true",
                        help="print the default config text and exit")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="arcflow",
        description="momentum-mixture flow distillation, desk scale",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_verify = sub.add_parser("verify", help="run all invariant suites")
    _add_common(p_verify)
    p_verify.set_defaults(func=cli_verify)

    p_distill = sub.add_parser("distill", help="train and evaluate a student")
    _add_common(p_distill)
    p_distill.add_argument("--steps", type=int,
                           help="override total training steps")
    p_distill.set_defaults(func=cli_distill)

    p_ablate = sub.add_parser("ablate", help="paired-seed ablation studies")
    _add_common(p_ablate)
    p_ablate.add_argument("--studies",
                          help="comma list from: "
                               + ",".join(harness.ABLATION_STUDIES))
    p_ablate.add_argument("--seeds", default="0,1,2",
                          help="comma list of paired seeds")
    p_ablate.set_defaults(func=cli_ablate)

    p_sample = sub.add_parser("sample", help="roll trajectories from a "
                                             "checkpoint")
    _add_common(p_sample)
    p_sample.add_argument("--checkpoint", required=True)
    p_sample.add_argument("--baseline",
                          help="optional second checkpoint drawn alongside")
    p_sample.add_argument("--count", type=int, default=8)
    p_sample.add_argument("--nfe", type=int)
    p_sample.set_defaults(func=cli_sample)

    args = parser.parse_args(argv)
    if getattr(args, "print_defaults", False):
        print(harness.format_run_config(harness.RunConfig()), end="")
        return 0
    try:
        return args.func(args)
    except ArcFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
