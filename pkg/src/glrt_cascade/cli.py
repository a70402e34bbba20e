"""``bench`` command line entry point."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .changepoint import first_detection
from .core_math import THRESHOLDS
from .environment import check_assumption2, make_hard_instance, make_synthetic, write_segments_csv
from .errors import ValidationError
from .harness import ExperimentConfig, build_environment, emit_outputs, resolve_workers, run_experiment
from .policies import default_p


def _read_stream(source: str) -> np.ndarray:
    text = sys.stdin.read() if source == "-" else Path(source).read_text(encoding="utf-8")
    tokens = text.split()
    bad = [tok for tok in tokens if tok not in ("0", "1")]
    if bad:
        raise ValidationError(f"stream must contain only 0/1 tokens, found {bad[0]!r}")
    return np.array([int(tok) for tok in tokens], dtype=np.int64)


def cmd_detect(args: argparse.Namespace) -> int:
    stream = _read_stream(args.input)
    hit = first_detection(
        stream, args.delta, stride=args.stride, check_period=args.check_period, threshold=args.threshold
    )
    print("none" if hit is None else hit)
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = ExperimentConfig.from_file(args.config)
    if args.out:
        config.output_dir = args.out
    if args.trials:
        config.trials = args.trials
    out = Path(config.output_dir or "bench-out")
    summary = run_experiment(config, workers=resolve_workers(config))
    for path in emit_outputs(summary, out, svg=args.svg):
        print(f"wrote {path}")
    for name, ps in summary.policies.items():
        print(f"{name:>14}  T-step regret {ps.final_mean:10.2f} +/- {ps.final_std:.2f}")
    return 0


def cmd_check(args: argparse.Namespace) -> int:
    config = ExperimentConfig.from_file(args.config)
    spec = build_environment(config)
    N = spec.N if config.n_segments is None else config.n_segments
    p = config.p if config.p is not None else default_p(spec.T, N, spec.L, config.p_rule)
    delta = config.delta if config.delta is not None else 1.0 / spec.T
    report = check_assumption2(spec, p, delta)
    print("\n".join(report.lines()))
    return 0


def cmd_make_env(args: argparse.Namespace) -> int:
    if args.kind == "synthetic":
        spec = make_synthetic(args.seed)
    else:
        spec = make_hard_instance(args.L, args.K, args.N, args.T, args.seed)
    write_segments_csv(spec, args.out)
    print(f"wrote {args.out} (L={spec.L}, K={spec.K}, T={spec.T}, N={spec.N})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a Monte Carlo experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="output directory (overrides output_dir)")
    run.add_argument("--trials", type=int, help="override the trial count")
    run.add_argument("--svg", action="store_true", help="also write regret_curve.svg")
    run.set_defaults(func=cmd_run)

    det = sub.add_parser("detect", help="first GLRT detection in a 0/1 stream")
    det.add_argument("input", nargs="?", default="-", help="file with 0/1 tokens, '-' for stdin")
    det.add_argument("--delta", type=float, required=True)
    det.add_argument("--stride", type=int, default=1)
    det.add_argument("--check-period", type=int, default=1)
    det.add_argument("--threshold", choices=THRESHOLDS, default="practical")
    det.set_defaults(func=cmd_detect)

    chk = sub.add_parser("check-assumption", help="segment-length report for a configured environment")
    chk.add_argument("--config", required=True)
    chk.set_defaults(func=cmd_check)

    env = sub.add_parser("make-env", help="write an environment as a segment CSV")
    env.add_argument("--kind", choices=("synthetic", "hard"), required=True)
    env.add_argument("--seed", type=int, default=0)
    env.add_argument("--out", required=True)
    env.add_argument("--L", type=int, default=10)
    env.add_argument("--K", type=int, default=3)
    env.add_argument("--N", type=int, default=10)
    env.add_argument("--T", type=int, default=25000)
    env.set_defaults(func=cmd_make_env)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValidationError, OSError) as exc:
        print(f"bench: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
