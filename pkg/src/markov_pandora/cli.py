"""Command-line entry point: solve, estimate, truncate, simulate, pareto,
counterexample.

Exit codes: 0 success, 1 runtime failure, 2 invalid input. Every command is
reproducible byte-for-byte given the same config and seed. Defaults for
--seed, --samples, --threads, and --output-dir can be overridden with
environment variables prefixed PANDORA_ (e.g. PANDORA_SEED=7).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import evaluate as ev
from . import instance_io as iio
from .line import build_payoff_table
from .mixing import truncated_solve
from .model import EnumerationLimitError, InvalidInstanceError, PandoraError, quantize_losses, validate_instance
from .model import line_instance_from_trace
from .multiline import MultiLinePolicy
from .oracles import (
    ThresholdPolicy,
    brute_force_online_optimal,
    inapprox_instance,
    no_recall_threshold_policy,
    offline_optimal,
)
from .skip import build_skip_table
from .tree import solve_tree


def _env(name: str, cast, fallback):
    raw = os.environ.get(f"PANDORA_{name}")
    if raw is None:
        return fallback
    return cast(raw)


def _out_dir(args) -> Path:
    path = Path(args.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_validated(path):
    instance = iio.load_instance(path)
    report = validate_instance(instance)
    if not report.ok:
        raise InvalidInstanceError("; ".join(report.violations))
    return instance


def _parse_grid(text: str) -> list[float]:
    """a:b:step inclusive grid, or a comma-separated list."""
    if ":" in text:
        start, stop, step = (float(x) for x in text.split(":"))
        count = int(round((stop - start) / step))
        return [start + i * step for i in range(count + 1)]
    return [float(x) for x in text.split(",")]


def cmd_solve(args) -> int:
    instance = _load_validated(args.instance)
    out = _out_dir(args)
    if instance.topology == "line":
        table = build_payoff_table(instance)
        value = table.value
        (out / "table.csv").write_text(table.dump_table())
        (out / "index.csv").write_text(table.dump_index())
    elif instance.topology == "multiline":
        policy = MultiLinePolicy(instance)
        value = policy.expected_value()
        for j, t in enumerate(policy.tables):
            (out / f"table_line{j}.csv").write_text(t.dump_table())
            (out / f"index_line{j}.csv").write_text(t.dump_index())
    elif instance.topology == "tree":
        policy = solve_tree(instance)
        value = policy.value
        (out / "policy.csv").write_text(policy.dump())
    else:
        table = build_skip_table(instance)
        value = table.root_value
        (out / "table.csv").write_text(table.dump_table())
    print(f"value: {value!r}")
    if args.verify:
        try:
            oracle = brute_force_online_optimal(instance).expected_loss
        except EnumerationLimitError as exc:
            print(f"verify skipped: {exc}")
        else:
            gap = abs(value - oracle)
            if gap >= 1e-9:
                print(f"VERIFY FAILED: |DP - oracle| = {gap!r}")
                return 1
            print(f"verified: |DP - oracle| = {gap!r} < 1e-9")
    return 0


def cmd_estimate(args) -> int:
    trace = iio.load_trace(args.trace, args.costs)
    support, quantized = quantize_losses(trace, args.bins)
    instance = line_instance_from_trace(quantized, lam=args.lam, smoothing=args.smoothing)
    report = validate_instance(instance)
    if not report.ok:
        raise InvalidInstanceError("; ".join(report.violations))
    out = _out_dir(args)
    iio.save_instance(instance, out / "instance.json")
    print(f"support: {list(support.values)!r}")
    print(f"instance written: {out / 'instance.json'}")
    return 0


def cmd_truncate(args) -> int:
    instance = _load_validated(args.instance)
    report = truncated_solve(instance, args.delta, compute_full=not args.skip_full)
    out = _out_dir(args)
    import json

    (out / "truncate.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"t_delta: {report.t_delta}")
    print(f"gap bound: {report.gap_bound!r}")
    print(f"truncated value: {report.truncated_value!r}")
    if report.full_value is not None:
        print(f"full value: {report.full_value!r}")
        print(f"gap: {report.gap!r}")
    return 0


def _policy_for(args, instance):
    if args.policy == "index":
        return ev.optimal_policy(instance)
    if args.policy == "threshold":
        if args.threshold is None:
            raise InvalidInstanceError("--threshold required for the threshold policy")
        return ThresholdPolicy(instance, [args.threshold] * instance.n)
    raise InvalidInstanceError(f"unknown policy {args.policy!r}")


def cmd_simulate(args) -> int:
    instance = _load_validated(args.instance)
    policy = _policy_for(args, instance)
    result = ev.monte_carlo_eval(policy, instance, args.samples, args.seed, threads=args.threads)
    print(f"policy: {policy.name}")
    print(f"mean: {result.mean!r}")
    print(f"stderr: {result.stderr!r}")
    out = _out_dir(args)
    if args.dump_rollouts:
        (out / "rollouts.jsonl").write_text(ev.rollouts_jsonl(policy, instance, args.samples, args.seed))
    hist = "\n".join(f"{v!r},{c}" for v, c in result.histogram)
    (out / "histogram.csv").write_text("objective,count\n" + hist + "\n")
    return 0


def cmd_pareto(args) -> int:
    trace = iio.load_trace(args.trace, args.costs)
    _, quantized = quantize_losses(trace, args.bins)
    grid = _parse_grid(args.lambda_grid)
    sweep = ev.pareto_sweep(
        quantized, grid, bins=args.bins, threshold_grid=args.threshold_grid
    )
    out = _out_dir(args)
    (out / "frontier.csv").write_text(sweep.frontier_csv())
    lines = ["lambda,policy,error,latency,objective"]
    lines += [f"{l!r},{p},{e!r},{la!r},{o!r}" for l, p, e, la, o in sweep.rows]
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    lines = ["lambda,dp_value,best_threshold_value"]
    lines += [f"{l!r},{d!r},{t!r}" for l, d, t in sweep.model_values]
    (out / "model_values.csv").write_text("\n".join(lines) + "\n")
    dominated = sum(1 for l, d, t in sweep.model_values if d > t + 1e-9)
    print(f"grid points: {len(grid)}; index policy beaten at {dominated} points")
    print(f"frontier written: {out / 'frontier.csv'}")
    return 0


def cmd_counterexample(args) -> int:
    instance = inapprox_instance(args.alpha)
    opt = offline_optimal(instance).expected_loss
    nr = no_recall_threshold_policy(instance, [float("inf")] * instance.n).expected_loss
    recall = brute_force_online_optimal(instance).expected_loss
    print(f"alpha: {args.alpha!r}")
    print(f"offline OPT: {opt!r}")
    print(f"best no-recall value: {nr!r}")
    print(f"no-recall / OPT ratio: {nr / opt!r}")
    print(f"with-recall optimal value: {recall!r}")
    out = _out_dir(args)
    iio.save_instance(instance, out / "counterexample.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pandora",
        description="Optimal stop/continue/route policies for Markov-correlated costly exploration",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument(
            "--output-dir",
            default=_env("OUTPUT_DIR", str, "pandora-out"),
            help="directory for artifacts (default pandora-out; env PANDORA_OUTPUT_DIR)",
        )

    p = sub.add_parser("solve", help="solve an instance and dump tables/indices")
    p.add_argument("--instance", required=True, help="instance JSON file")
    p.add_argument("--verify", action="store_true", help="cross-check against the brute-force oracle")
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("estimate", help="quantize a trace and estimate a line instance")
    p.add_argument("--trace", required=True, help="trace CSV file")
    p.add_argument("--costs", default=None, help="companion costs CSV file")
    p.add_argument("--bins", type=int, default=8, help="number of support levels")
    p.add_argument("--lambda", dest="lam", type=float, default=0.5, help="tradeoff weight")
    p.add_argument("--smoothing", type=float, default=1.0, help="Laplace pseudocount")
    common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("truncate", help="mixing-based truncation of a static-transition instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--delta", type=float, required=True, help="failure probability in (0,1)")
    p.add_argument("--skip-full", action="store_true", help="skip solving the full instance")
    common(p)
    p.set_defaults(func=cmd_truncate)

    p = sub.add_parser("simulate", help="Monte Carlo evaluation of a policy")
    p.add_argument("--instance", required=True)
    p.add_argument("--samples", type=int, default=_env("SAMPLES", int, 10000))
    p.add_argument("--seed", type=int, default=_env("SEED", int, None), required=_env("SEED", int, None) is None)
    p.add_argument("--threads", type=int, default=_env("THREADS", int, os.cpu_count() or 1))
    p.add_argument("--policy", choices=["index", "threshold"], default="index")
    p.add_argument("--threshold", type=float, default=None, help="raw-loss threshold for --policy threshold")
    p.add_argument("--dump-rollouts", action="store_true", help="write rollouts.jsonl")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pareto", help="lambda-sweep accuracy/latency frontier from a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--costs", default=None)
    p.add_argument("--bins", type=int, default=8)
    p.add_argument("--lambda-grid", default="0:1:0.05", help="a:b:step or comma list")
    p.add_argument("--threshold-grid", type=float, default=0.05)
    common(p)
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("counterexample", help="emit the no-recall inapproximability instance")
    p.add_argument("--alpha", type=float, required=True, help="target approximation ratio (> 1)")
    common(p)
    p.set_defaults(func=cmd_counterexample)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidInstanceError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PandoraError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
