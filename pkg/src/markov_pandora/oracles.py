"""Ground-truth machinery: prophet benchmark, exhaustive online-optimal search,
no-recall threshold baselines, and the inapproximability counterexample family.

The brute-force online optimum deliberately searches over full observation
histories rather than Markov states, so that Markov-state sufficiency of the
DP solvers is tested, not assumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    EnumerationLimitError,
    ExplorationInstance,
    NodeSpec,
    RolloutResult,
    Support,
)

SIZE_GUARD = 10**6


@dataclass(frozen=True)
class PolicyValue:
    """Expected loss of a policy, optionally with the outcome enumeration."""

    expected_loss: float
    atoms: tuple[tuple[float, float], ...] | None = None  # (probability, objective)


def _effective_arrays(instance: ExplorationInstance):
    values = instance.effective_support()
    costs = [instance.effective_cost(node) for node in instance.nodes]
    rows = []
    for node in instance.nodes:
        if node.root_pmf is not None:
            rows.append(instance.effective_pmf(node.root_pmf))
        else:
            rows.append(instance.effective_kernel(node.transition))
    return values, costs, rows


def _guard(instance: ExplorationInstance, limit: int = SIZE_GUARD) -> None:
    if instance.k_eff**instance.n > limit:
        raise EnumerationLimitError(
            f"joint outcome space {instance.k_eff}^{instance.n} exceeds {limit}"
        )


def offline_optimal(
    instance: ExplorationInstance,
    limit: int = SIZE_GUARD,
    samples: int | None = None,
    seed: int = 0,
) -> PolicyValue:
    """Prophet benchmark E[min_i R_i]: full foresight, zero inspection cost.

    Enumeration when the joint outcome space fits under ``limit``; with
    ``samples`` given, larger spaces fall back to Monte Carlo.
    """
    if instance.k_eff**instance.n > limit:
        if samples is None:
            _guard(instance, limit)
        rng = np.random.default_rng(seed)
        values = instance.effective_support()
        total = 0.0
        for _ in range(samples):
            realization = instance.sample_realization(rng)
            total += min(float(values[instance.effective_index(i)]) for i in realization.values())
        return PolicyValue(expected_loss=total / samples)
    _guard(instance, limit)
    values, _, rows = _effective_arrays(instance)
    k = values.size
    atoms: list[tuple[float, float]] = []

    if instance.topology in ("line", "skipline", "multiline"):
        groups = instance.line_groups()

        def walk_line(g: int, pos: int, last: int, prob: float, cur_min: float):
            nodes = groups[g]
            if pos == len(nodes):
                if g + 1 == len(groups):
                    atoms.append((prob, cur_min))
                else:
                    walk_line(g + 1, 0, -1, prob, cur_min)
                return
            offset = sum(len(x) for x in groups[:g])
            row = rows[offset + pos] if pos == 0 else rows[offset + pos][last]
            for y in range(k):
                p = float(row[y])
                if p > 0:
                    walk_line(g, pos + 1, y, prob * p, min(cur_min, values[y]))

        walk_line(0, 0, -1, 1.0, math.inf)
    else:
        children = instance.tree_children()
        order: list[NodeSpec] = []
        stack = list(children[None])
        while stack:
            node = instance.node_by_id(stack.pop())
            order.append(node)
            stack.extend(children[node.id])
        node_pos = {node.id: j for j, node in enumerate(order)}

        def walk_tree(j: int, assignment: dict, prob: float, cur_min: float):
            if j == len(order):
                atoms.append((prob, cur_min))
                return
            node = order[j]
            if node.parent is None:
                row = instance.effective_pmf(node.root_pmf)
            else:
                row = instance.effective_kernel(node.transition)[assignment[node.parent]]
            for y in range(k):
                p = float(row[y])
                if p > 0:
                    assignment[node.id] = y
                    walk_tree(j + 1, assignment, prob * p, min(cur_min, values[y]))
            assignment.pop(node.id, None)

        walk_tree(0, {}, 1.0, math.inf)
    total = math.fsum(p * v for p, v in atoms)
    return PolicyValue(expected_loss=total, atoms=tuple(atoms))


def brute_force_online_optimal(
    instance: ExplorationInstance, limit: int = SIZE_GUARD
) -> PolicyValue:
    """Minimum expected loss over every adaptive route/stop policy.

    Recursion over full histories (ordered observation sequences); used to
    certify the Markov-state dynamic programs on small instances.
    """
    _guard(instance, limit)
    values, costs, rows = _effective_arrays(instance)
    k = values.size
    topo = instance.topology

    if topo == "line":
        def v_line(pos: int, hist: tuple[int, ...]) -> float:
            best = min((values[h] for h in hist), default=math.inf)
            if pos == instance.n:
                return best
            row = rows[pos] if pos == 0 else rows[pos][hist[-1]]
            cont = costs[pos] + sum(
                float(row[y]) * v_line(pos + 1, hist + (y,)) for y in range(k) if row[y] > 0
            )
            return min(best, cont)

        return PolicyValue(expected_loss=float(v_line(0, ())))

    if topo == "multiline":
        groups = instance.line_groups()
        offsets = np.cumsum([0] + [len(g) for g in groups[:-1]])

        def v_ml(positions: tuple[int, ...], hist: tuple[tuple[int, int], ...]) -> float:
            best = min((values[y] for _, y in hist), default=math.inf)
            options = [best]
            for g, pos in enumerate(positions):
                if pos == len(groups[g]):
                    continue
                last = next((y for gg, y in reversed(hist) if gg == g), None)
                j = int(offsets[g]) + pos
                row = rows[j] if last is None else rows[j][last]
                nxt = tuple(p + (1 if gg == g else 0) for gg, p in enumerate(positions))
                cont = costs[j] + sum(
                    float(row[y]) * v_ml(nxt, hist + ((g, y),)) for y in range(k) if row[y] > 0
                )
                options.append(cont)
            return min(options)

        return PolicyValue(expected_loss=float(v_ml(tuple(0 for _ in groups), ())))

    if topo == "tree":
        children = instance.tree_children()
        cost_by_id = {n.id: instance.effective_cost(n) for n in instance.nodes}

        def row_for(node_id: str, observed: dict) -> np.ndarray:
            node = instance.node_by_id(node_id)
            if node.parent is None:
                return instance.effective_pmf(node.root_pmf)
            return instance.effective_kernel(node.transition)[observed[node.parent]]

        def v_tree(fronts: frozenset, observed_items: tuple) -> float:
            observed = dict(observed_items)
            best = min((values[y] for y in observed.values()), default=math.inf)
            options = [best]
            for node_id in sorted(fronts):
                row = row_for(node_id, observed)
                nxt = (fronts - {node_id}) | set(children[node_id])
                cont = cost_by_id[node_id] + sum(
                    float(row[y]) * v_tree(frozenset(nxt), observed_items + ((node_id, y),))
                    for y in range(k)
                    if row[y] > 0
                )
                options.append(cont)
            return min(options)

        return PolicyValue(expected_loss=float(v_tree(frozenset(children[None]), ())))

    # skipline: any later node may be probed next; law via step-kernel products
    kernels = [instance.effective_kernel(node.transition) for node in instance.nodes[1:]]
    root = instance.effective_pmf(instance.nodes[0].root_pmf)
    dense = instance.skip_costs.dense() * (1.0 - instance.lam)

    def law(from_pos: int, last: int | None, to_pos: int) -> np.ndarray:
        # distribution of R_to given value at from_pos (positions 1-based, 0 = root)
        if from_pos == 0:
            out = root.copy()
            start = 1
        else:
            out = kernels[from_pos - 1][last].copy()
            start = from_pos + 1
        for step in range(start, to_pos):
            out = out @ kernels[step - 1]
        return out

    def v_skip(pos: int, last: int | None, hist_min: float) -> float:
        options = [hist_min]
        for j in range(pos + 1, instance.n + 1):
            row = law(pos, last, j)
            cont = float(dense[pos, j]) + sum(
                float(row[y]) * v_skip(j, y, min(hist_min, values[y]))
                for y in range(k)
                if row[y] > 0
            )
            options.append(cont)
        return min(options)

    return PolicyValue(expected_loss=float(v_skip(0, None, math.inf)))


def no_recall_threshold_policy(instance: ExplorationInstance, thresholds) -> PolicyValue:
    """Exact value of a no-recall threshold policy on a line.

    Stops at the first node whose raw loss is <= its threshold (forced stop at
    node n), serving that node. Objective is in effective units.
    """
    if instance.topology != "line":
        raise ValueError("threshold policies apply to line instances")
    thr = [float(t) for t in thresholds]
    if len(thr) != instance.n:
        raise ValueError("one threshold per node required")
    raw_vals = instance.support.as_array()
    k = instance.k
    eff_vals = instance.lam * raw_vals
    reach = np.asarray(instance.nodes[0].root_pmf, dtype=float).copy()
    total = 0.0
    for pos, node in enumerate(instance.nodes):
        total += reach.sum() * instance.effective_cost(node)
        stop_mask = (raw_vals <= thr[pos]) | (pos == instance.n - 1)
        total += float((reach * stop_mask * eff_vals).sum())
        if pos < instance.n - 1:
            carry = reach * ~stop_mask
            reach = carry @ np.asarray(instance.nodes[pos + 1].transition, dtype=float)
    return PolicyValue(expected_loss=float(total))


class ThresholdPolicy:
    """Rollout form of the no-recall threshold rule (thresholds in raw units)."""

    def __init__(self, instance: ExplorationInstance, thresholds):
        if instance.topology != "line":
            raise ValueError("threshold policies apply to line instances")
        self.instance = instance
        self.thresholds = [float(t) for t in thresholds]
        self.name = "threshold"

    def run(self, realization) -> RolloutResult:
        inst = self.instance
        raw_vals = inst.support.as_array()
        inspected = []
        total_cost = 0.0
        last_raw = None
        for pos, node in enumerate(inst.nodes):
            raw = int(realization[node.id])
            inspected.append(node.id)
            total_cost += inst.effective_cost(node)
            last_raw = raw
            if raw_vals[raw] <= self.thresholds[pos] or pos == inst.n - 1:
                break
        realized = inst.lam * float(raw_vals[last_raw])
        return RolloutResult(
            serve_node=inspected[-1],
            exit_node=inspected[-1],
            inspected=tuple(inspected),
            realized_loss=realized,
            loss_index=last_raw,
            total_cost=total_cost,
            objective=realized + total_cost,
        )


def inapprox_instance(alpha: float) -> ExplorationInstance:
    """Two-node line on which every no-recall policy is exactly alpha times
    the prophet: R1 = 1/alpha^2 surely, R2 = 0 w.p. 1 - 1/alpha else 1/alpha,
    all inspection costs zero.
    """
    if not alpha > 1:
        raise ValueError("alpha must be > 1")
    a = float(alpha)
    support = Support((0.0, a**-2, a**-1))
    r2_row = np.array([1.0 - 1.0 / a, 0.0, 1.0 / a])
    nodes = (
        NodeSpec(id="n1", cost=0.0, root_pmf=np.array([0.0, 1.0, 0.0])),
        NodeSpec(id="n2", cost=0.0, transition=np.tile(r2_row, (3, 1))),
    )
    return ExplorationInstance("line", support, 1.0, nodes)
