"""Monte Carlo evaluation, policy comparison, and lambda-sweep Pareto frontiers.

Per-sample RNG streams are derived from the seed with counter-based (Philox)
keys, so results are identical no matter how rollouts are chunked across
threads. Paired policy comparisons reuse the same realization streams
(common random numbers).
"""

from __future__ import annotations

import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .line import build_payoff_table, run_policy
from .model import ExplorationInstance, RolloutResult, TraceDataset, quantize_losses, line_instance_from_trace
from .multiline import MultiLinePolicy
from .oracles import ThresholdPolicy, no_recall_threshold_policy
from .skip import build_skip_table, run_skip_policy
from .tree import solve_tree


class LineIndexPolicy:
    """With-recall dynamic-index policy on a line instance."""

    def __init__(self, instance: ExplorationInstance):
        self.instance = instance
        self.table = build_payoff_table(instance)
        self.name = "dynamic-index"

    def run(self, realization) -> RolloutResult:
        return run_policy(self.table, realization)

    def expected_value(self) -> float:
        return self.table.value


class SkipIndexPolicy:
    def __init__(self, instance: ExplorationInstance):
        self.instance = instance
        self.table = build_skip_table(instance)
        self.name = "skip-index"

    def run(self, realization) -> RolloutResult:
        return run_skip_policy(self.table, realization)

    def expected_value(self) -> float:
        return self.table.root_value


def optimal_policy(instance: ExplorationInstance):
    """The exact-DP policy for the instance's topology."""
    if instance.topology == "line":
        return LineIndexPolicy(instance)
    if instance.topology == "multiline":
        return MultiLinePolicy(instance)
    if instance.topology == "tree":
        return solve_tree(instance)
    return SkipIndexPolicy(instance)


def sample_stream(instance: ExplorationInstance, seed: int, index: int) -> dict[str, int]:
    """Realization for sample ``index``; independent of chunking/parallelism."""
    rng = np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), index]))
    return instance.sample_realization(rng)


@dataclass(frozen=True)
class EvalResult:
    mean: float
    stderr: float
    histogram: tuple[tuple[float, int], ...]  # (objective, count), sorted
    samples: int


def monte_carlo_eval(
    policy,
    instance: ExplorationInstance,
    samples: int,
    seed: int,
    threads: int = 1,
) -> EvalResult:
    """Sample realizations, run the policy, aggregate the objective."""
    if samples < 1:
        raise ValueError("samples must be >= 1")

    def chunk(indices) -> list[float]:
        return [policy.run(sample_stream(instance, seed, i)).objective for i in indices]

    if threads > 1:
        bounds = np.array_split(np.arange(samples), threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(chunk, [b.tolist() for b in bounds]))
        objectives = [x for part in parts for x in part]
    else:
        objectives = chunk(range(samples))
    mean = math.fsum(objectives) / samples
    if samples > 1:
        var = math.fsum((o - mean) ** 2 for o in objectives) / (samples - 1)
        stderr = math.sqrt(var / samples)
    else:
        stderr = 0.0
    hist = tuple(sorted(Counter(objectives).items()))
    return EvalResult(mean=mean, stderr=stderr, histogram=hist, samples=samples)


@dataclass(frozen=True)
class ComparisonRow:
    policy: str
    mean: float
    stderr: float


def compare_policies(
    instance: ExplorationInstance,
    policies,
    samples: int,
    seed: int,
) -> list[ComparisonRow]:
    """Evaluate several policies on identical realization streams."""
    sums = {p.name: [] for p in policies}
    for i in range(samples):
        realization = sample_stream(instance, seed, i)
        for p in policies:
            sums[p.name].append(p.run(realization).objective)
    rows = []
    for p in policies:
        vals = sums[p.name]
        mean = math.fsum(vals) / samples
        var = math.fsum((v - mean) ** 2 for v in vals) / max(samples - 1, 1)
        rows.append(ComparisonRow(policy=p.name, mean=mean, stderr=math.sqrt(var / samples)))
    return rows


def comparison_csv(rows: list[ComparisonRow]) -> str:
    lines = ["policy,mean,stderr"]
    lines += [f"{r.policy},{r.mean!r},{r.stderr!r}" for r in rows]
    return "\n".join(lines) + "\n"


def rollouts_jsonl(policy, instance, samples: int, seed: int) -> str:
    out = []
    for i in range(samples):
        r = policy.run(sample_stream(instance, seed, i))
        out.append(
            json.dumps(
                {
                    "sample": i,
                    "serve_node": r.serve_node,
                    "exit_node": r.exit_node,
                    "inspected": list(r.inspected),
                    "realized_loss": r.realized_loss,
                    "total_cost": r.total_cost,
                    "objective": r.objective,
                },
                sort_keys=True,
            )
        )
    return "\n".join(out) + "\n"


# -- Pareto sweep -------------------------------------------------------------


@dataclass(frozen=True)
class ParetoPoint:
    lam: float
    error: float  # mean raw loss of the served exit (confidence proxy)
    latency: float  # raw cost paid / total pipeline cost


@dataclass(frozen=True)
class ParetoSweepResult:
    frontiers: dict[str, tuple[ParetoPoint, ...]]  # non-dominated per policy
    rows: tuple[tuple[float, str, float, float, float], ...]  # lambda, policy, error, latency, objective
    model_values: tuple[tuple[float, float, float], ...]  # lambda, dp value, best threshold value

    def frontier_csv(self) -> str:
        lines = ["lambda,policy,error,latency"]
        for name, points in sorted(self.frontiers.items()):
            for p in points:
                lines.append(f"{p.lam!r},{name},{p.error!r},{p.latency!r}")
        return "\n".join(lines) + "\n"


def _dominated(points: list[ParetoPoint]) -> tuple[ParetoPoint, ...]:
    keep = []
    for p in points:
        if any(
            (q.error <= p.error and q.latency <= p.latency)
            and (q.error < p.error or q.latency < p.latency)
            for q in points
        ):
            continue
        keep.append(p)
    return tuple(keep)


def _trace_metrics(instance: ExplorationInstance, policy, trace: TraceDataset) -> tuple[float, float, float]:
    """Mean (raw served loss, normalized raw latency, effective objective) on trace rows."""
    raw_vals = instance.support.as_array()
    raw_costs = {node.id: node.cost for node in instance.nodes}
    total_cost = sum(raw_costs.values())
    ids = [node.id for node in instance.nodes]
    err = lat = obj = 0.0
    for row in trace.indices:
        realization = {nid: int(v) for nid, v in zip(ids, row)}
        res = policy.run(realization)
        err += float(raw_vals[res.loss_index])
        lat += sum(raw_costs[nid] for nid in res.inspected) / total_cost
        obj += res.objective
    t = trace.num_rows
    return err / t, lat / t, obj / t


def pareto_sweep(
    source,
    lambda_grid,
    bins: int = 8,
    smoothing: float = 1.0,
    threshold_grid: float = 0.05,
) -> ParetoSweepResult:
    """Re-weight, re-solve, and evaluate per lambda; emit frontier points.

    ``source`` is a TraceDataset (quantized on ingestion when needed) whose
    rows double as the evaluation set. Policies: the with-recall dynamic
    index and the best no-recall confidence threshold from a grid with the
    given coarseness (thresholds span [0, v_k] in raw loss units). Model
    values (exact, under the fitted chain) are reported alongside so the
    index policy's optimality is checkable per grid point.
    """
    if isinstance(source, TraceDataset):
        trace = source
        if trace.indices is None:
            _, trace = quantize_losses(trace, bins)
    else:
        raise TypeError("pareto_sweep expects a TraceDataset")
    base = line_instance_from_trace(trace, lam=0.5, smoothing=smoothing)
    v_max = float(base.support.as_array()[-1])
    thresholds = [g * v_max for g in np.arange(0.0, 1.0 + 1e-9, threshold_grid)]

    rows = []
    model_values = []
    by_policy: dict[str, list[ParetoPoint]] = {"dynamic-index": [], "fixed-threshold": []}
    for lam in lambda_grid:
        inst = base.with_lambda(float(lam))
        dp = LineIndexPolicy(inst)
        err, lat, obj = _trace_metrics(inst, dp, trace)
        by_policy["dynamic-index"].append(ParetoPoint(float(lam), err, lat))
        rows.append((float(lam), "dynamic-index", err, lat, obj))

        best = None
        for tau in thresholds:
            value = no_recall_threshold_policy(inst, [tau] * inst.n).expected_loss
            if best is None or value < best[0]:
                best = (value, tau)
        best_value, best_tau = best
        thr_policy = ThresholdPolicy(inst, [best_tau] * inst.n)
        err, lat, obj = _trace_metrics(inst, thr_policy, trace)
        by_policy["fixed-threshold"].append(ParetoPoint(float(lam), err, lat))
        rows.append((float(lam), "fixed-threshold", err, lat, obj))
        model_values.append((float(lam), float(dp.expected_value()), float(best_value)))

    frontiers = {name: _dominated(points) for name, points in by_policy.items()}
    return ParetoSweepResult(
        frontiers=frontiers, rows=tuple(rows), model_values=tuple(model_values)
    )


def make_synthetic_ee_trace(
    n_exits: int = 6,
    rows: int = 2000,
    levels: int = 8,
    seed: int = 0,
    correlation: float = 0.6,
) -> TraceDataset:
    """Synthetic early-exit trace: confidence-proxy losses in (0, 1) from a
    static-transition chain over ``levels`` quantized levels, positively
    correlated across exits, with per-exit costs as fractions of the full
    pipeline (summing to 1, the FLOPs-ratio convention)."""
    rng = np.random.default_rng(seed)
    grid = np.linspace(0.05, 0.95, levels)
    drift = np.linspace(2.0, 0.7, levels)  # later exits drift toward lower loss
    base = np.exp(-drift)
    base = base / base.sum()
    kernel = correlation * np.eye(levels) + (1.0 - correlation) * np.tile(base, (levels, 1))
    root = np.exp(0.8 * np.arange(levels))
    root = root / root.sum()  # early exits lean toward high loss
    losses = np.empty((rows, n_exits))
    for r in range(rows):
        idx = int(rng.choice(levels, p=root))
        losses[r, 0] = grid[idx]
        for j in range(1, n_exits):
            idx = int(rng.choice(levels, p=kernel[idx]))
            losses[r, j] = grid[idx]
    costs = np.full(n_exits, 1.0 / n_exits)
    return TraceDataset(losses=losses, costs=costs)
