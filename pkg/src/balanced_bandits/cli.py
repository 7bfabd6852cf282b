"""Command-line entry point: ``balanced-bandits run ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from .environments import BUNDLED_DATASETS, SyntheticEnv
from .harness import ExperimentConfig, aggregate_and_write, parse_env, run_experiment
from .policies import PolicyKind, expand_grid
from .regression import DEFAULT_RIDGE_GRID

FULL_SCALE_HORIZON = 10_000


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="balanced-bandits", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write per-step CSVs plus summary.json")
    run.add_argument(
        "--env",
        required=True,
        help="synthetic-well | synthetic-mis | dataset:<path> | bundled:<name>",
    )
    run.add_argument("--algo", action="append", required=True, choices=[k.value for k in PolicyKind])
    run.add_argument("--alpha", action="append", type=float, help="repeat to sweep; default per-kind grid")
    run.add_argument("--gamma", action="append", type=float, help="repeat to sweep; default 0.01,0.05,0.1,0.2")
    run.add_argument("--lambda-grid", type=_float_list, default=list(DEFAULT_RIDGE_GRID))
    run.add_argument("--T", dest="horizon", type=int, default=None, help="horizon (default 2000 synthetic, n rows for datasets)")
    run.add_argument("--full-scale", action="store_true", help=f"use T={FULL_SCALE_HORIZON} for synthetic runs")
    run.add_argument("--reps", type=int, default=None, help="replications (default 50 synthetic, 10 datasets)")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--mc-iters", type=int, default=1000)
    run.add_argument("--label-col", default=None)
    run.add_argument("--out", default="results")
    run.add_argument("--fidelity-recompute-propensities", action="store_true")
    run.add_argument("--fidelity-logit-every-period", action="store_true")
    run.add_argument("--probe-size", type=int, default=1000)
    run.add_argument("--agreement-threshold", type=float, default=0.95)
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("-v", "--verbose", action="store_true")

    sub.add_parser("datasets", help="list the bundled classification datasets")
    return parser


def _print_summary(summary) -> None:
    header = f"{'policy':<8}{'alpha':>7}{'gamma':>7}{'R(T)':>12}{'sd':>10}{'norm':>8}{'found%':>8}"
    print(header)
    for row in summary:
        gamma = "-" if row["gamma"] is None else f"{row['gamma']:g}"
        found = "-" if row["pct_optimal_found"] is None else f"{row['pct_optimal_found']:.1f}"
        print(
            f"{row['policy']:<8}{row['alpha']:>7g}{gamma:>7}{row['mean_cum_regret']:>12.2f}"
            f"{row['sd_cum_regret']:>10.2f}{row['mean_norm_regret']:>8.4f}{found:>8}"
        )


def cmd_run(args) -> int:
    env = parse_env(args.env, args.label_col)
    synthetic = isinstance(env, SyntheticEnv)
    horizon = args.horizon
    if horizon is None:
        horizon = (FULL_SCALE_HORIZON if args.full_scale else 2000) if synthetic else env.n
    reps = args.reps if args.reps is not None else (50 if synthetic else 10)
    overrides = dict(
        ridge_grid=tuple(args.lambda_grid),
        mc_iterations=args.mc_iters,
        recompute_propensities=args.fidelity_recompute_propensities,
    )
    if args.fidelity_logit_every_period:
        overrides["logit_refit_every"] = 1
    policies = expand_grid(args.algo, args.alpha, args.gamma, **overrides)
    config = ExperimentConfig(
        env,
        policies,
        horizon=horizon,
        replications=reps,
        seed=args.seed,
        probe_size=args.probe_size,
        agreement_threshold=args.agreement_threshold,
        jobs=args.jobs,
    )
    results = run_experiment(config)
    summary = aggregate_and_write(results, args.out)
    _print_summary(summary)
    return 1 if any(r.error for r in results) else 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING)
    if args.command == "datasets":
        print("\n".join(BUNDLED_DATASETS))
        return 0
    return cmd_run(args)


if __name__ == "__main__":
    sys.exit(main())
