"""Problem data model: discrete loss supports, node specs, exploration instances.

An exploration instance is a precedence DAG (line, multi-line, tree, or
skip-enabled line) over nodes that carry a random loss on a shared finite
support and a fixed inspection cost. Losses are Markov along directed paths:
each node holds either a marginal pmf (roots) or a transition matrix from its
parent's loss level.

The tradeoff weight ``lambda`` is applied once, at ingestion: effective node
loss is ``lambda * raw`` and effective cost is ``(1 - lambda) * raw``. All
solver modules consume the effective view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

TOP = math.inf  # current-min sentinel: nothing inspected yet

PROB_TOL = 1e-12  # stochasticity tolerance for pmfs and kernel rows

TOPOLOGIES = ("line", "multiline", "tree", "skipline")


class PandoraError(Exception):
    """Base error for this package."""


class InvalidInstanceError(PandoraError):
    """Instance construction or parsing failed."""


class UnknownLossLevelError(PandoraError):
    """A realization value is not on the instance's support."""


class EnumerationLimitError(PandoraError):
    """Exhaustive computation would exceed the configured size guard."""


def check_pmf(p, k: int, tol: float = PROB_TOL) -> list[str]:
    """Return invariant violations of ``p`` as a pmf over ``k`` levels."""
    p = np.asarray(p, dtype=float)
    problems = []
    if p.shape != (k,):
        problems.append(f"pmf has shape {p.shape}, expected ({k},)")
        return problems
    if np.any(p < -tol) or np.any(p > 1 + tol):
        problems.append("pmf entries outside [0, 1]")
    if abs(float(p.sum()) - 1.0) > tol:
        problems.append(f"pmf sums to {float(p.sum())!r}, not 1")
    return problems


def check_stochastic(P, k: int, tol: float = PROB_TOL) -> list[str]:
    """Return invariant violations of ``P`` as a row-stochastic k x k kernel."""
    P = np.asarray(P, dtype=float)
    if P.shape != (k, k):
        return [f"transition matrix has shape {P.shape}, expected ({k}, {k})"]
    problems = []
    for j, row in enumerate(P):
        bad = check_pmf(row, k, tol)
        if bad:
            problems.append(f"row {j} not stochastic: {'; '.join(bad)}")
    return problems


@dataclass(frozen=True)
class Support:
    """Strictly increasing finite loss levels v_1 < ... < v_k, all >= 0."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise InvalidInstanceError("support is empty")
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise InvalidInstanceError("support values must be finite and >= 0")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise InvalidInstanceError("support values must be strictly increasing")
        object.__setattr__(self, "values", vals)

    @property
    def k(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def index_of(self, value: float, tol: float = 1e-9) -> int:
        """Index of ``value`` on the support; raises if it is not a level."""
        arr = self.as_array()
        j = int(np.argmin(np.abs(arr - value)))
        if abs(arr[j] - value) > tol:
            raise UnknownLossLevelError(f"unknown loss level {value!r}")
        return j

    def nearest_index(self, value: float) -> int:
        """Index of the closest level; ties resolve to the lower level."""
        arr = self.as_array()
        j = int(np.searchsorted(arr, value))
        if j == 0:
            return 0
        if j == len(arr):
            return len(arr) - 1
        # tie (equidistant) maps down, keeping the mapping monotone
        return j - 1 if value - arr[j - 1] <= arr[j] - value else j


@dataclass(frozen=True, eq=False)
class NodeSpec:
    """One node: identifier, raw inspection cost, and its loss model.

    Exactly one of ``root_pmf`` / ``transition`` is set; a node has a root pmf
    iff its predecessor is the dummy root.
    """

    id: str
    cost: float
    root_pmf: np.ndarray | None = None
    transition: np.ndarray | None = None
    parent: str | None = None  # tree topology only
    line: int | None = None  # multiline topology only

    def __post_init__(self):
        if self.root_pmf is not None:
            object.__setattr__(self, "root_pmf", np.asarray(self.root_pmf, dtype=float))
        if self.transition is not None:
            object.__setattr__(self, "transition", np.asarray(self.transition, dtype=float))


@dataclass(frozen=True, eq=False)
class SkipCostTable:
    """Pairwise probing costs c(i, j) for 0 <= i < j <= n on a skip line.

    ``kind`` is one of ``matrix`` (explicit (n+1) x (n+1) upper triangle),
    ``affine`` (c(i, j) = base + rate_per_step * (j - i - 1)) or ``path_sum``
    (c(i, j) is the sum of the adjacent node costs i+1 .. j).
    """

    kind: str
    n: int
    matrix: np.ndarray | None = None
    base: float = 0.0
    rate_per_step: float = 0.0
    node_costs: tuple[float, ...] = ()

    @classmethod
    def from_matrix(cls, matrix) -> "SkipCostTable":
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidInstanceError("skip cost matrix must be square")
        return cls(kind="matrix", n=m.shape[0] - 1, matrix=m)

    @classmethod
    def affine(cls, n: int, base: float, rate_per_step: float) -> "SkipCostTable":
        return cls(kind="affine", n=n, base=float(base), rate_per_step=float(rate_per_step))

    @classmethod
    def path_sum(cls, node_costs: Sequence[float]) -> "SkipCostTable":
        costs = tuple(float(c) for c in node_costs)
        return cls(kind="path_sum", n=len(costs), node_costs=costs)

    def cost(self, i: int, j: int) -> float:
        if not (0 <= i < j <= self.n):
            raise ValueError(f"skip cost requested for invalid pair ({i}, {j})")
        if self.kind == "matrix":
            return float(self.matrix[i, j])
        if self.kind == "affine":
            return self.base + self.rate_per_step * (j - i - 1)
        total = 0.0
        for l in range(i + 1, j + 1):
            total += self.node_costs[l - 1]
        return total

    def dense(self) -> np.ndarray:
        out = np.zeros((self.n + 1, self.n + 1))
        for i in range(self.n + 1):
            for j in range(i + 1, self.n + 1):
                out[i, j] = self.cost(i, j)
        return out


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True, eq=False)
class ExplorationInstance:
    """A full problem instance: topology, support, nodes, and tradeoff weight."""

    topology: str
    support: Support
    lam: float
    nodes: tuple[NodeSpec, ...]
    skip_costs: SkipCostTable | None = None

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise InvalidInstanceError(f"unknown topology {self.topology!r}")
        if not self.nodes:
            raise InvalidInstanceError("instance has no nodes")
        object.__setattr__(self, "nodes", tuple(self.nodes))
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise InvalidInstanceError("duplicate node ids")

    # -- basic accessors ---------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def k(self) -> int:
        return self.support.k

    def node_by_id(self, node_id: str) -> NodeSpec:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise KeyError(node_id)

    def with_lambda(self, lam: float) -> "ExplorationInstance":
        """Same raw instance under a different tradeoff weight."""
        return ExplorationInstance(self.topology, self.support, float(lam), self.nodes, self.skip_costs)

    # -- effective (lambda-weighted) view ----------------------------------

    @property
    def k_eff(self) -> int:
        return 1 if self.lam == 0.0 else self.k

    def effective_support(self) -> np.ndarray:
        """Effective loss levels lambda * v_j (collapsed to [0] when lambda=0)."""
        if self.lam == 0.0:
            return np.zeros(1)
        return self.lam * self.support.as_array()

    def effective_index(self, raw_index: int) -> int:
        return 0 if self.lam == 0.0 else raw_index

    def effective_cost(self, node: NodeSpec) -> float:
        return (1.0 - self.lam) * node.cost

    def effective_pmf(self, pmf: np.ndarray) -> np.ndarray:
        if self.lam == 0.0:
            return np.array([1.0])
        return np.asarray(pmf, dtype=float)

    def effective_kernel(self, P: np.ndarray) -> np.ndarray:
        if self.lam == 0.0:
            return np.array([[1.0]])
        return np.asarray(P, dtype=float)

    # -- topology views ----------------------------------------------------

    def line_groups(self) -> list[list[NodeSpec]]:
        """Nodes grouped into ordered lines (one group for line/skipline)."""
        if self.topology in ("line", "skipline"):
            return [list(self.nodes)]
        if self.topology == "multiline":
            groups: dict[int, list[NodeSpec]] = {}
            for node in self.nodes:
                groups.setdefault(int(node.line or 0), []).append(node)
            return [groups[key] for key in sorted(groups)]
        raise InvalidInstanceError(f"{self.topology} instance has no line grouping")

    def tree_children(self) -> dict[str | None, list[str]]:
        """Children map keyed by parent id (None key lists the forest roots)."""
        children: dict[str | None, list[str]] = {None: []}
        for node in self.nodes:
            children.setdefault(node.id, [])
            children.setdefault(node.parent, []).append(node.id)
        return children

    # -- sampling ----------------------------------------------------------

    def _sampling_plan(self):
        """Cached per-node cumulative rows in dependency order."""
        plan = getattr(self, "_plan", None)
        if plan is None:
            plan = []
            if self.topology == "tree":
                children = self.tree_children()
                order: list[NodeSpec] = []
                stack = list(children[None])
                while stack:
                    node = self.node_by_id(stack.pop())
                    order.append(node)
                    stack.extend(children[node.id])
            else:
                order = [node for group in self.line_groups() for node in group]
            for node in order:
                if node.root_pmf is not None:
                    plan.append((node.id, None, np.cumsum(node.root_pmf)))
                else:
                    prev = node.parent if self.topology == "tree" else _prev_in_line(self, node)
                    plan.append((node.id, prev, np.cumsum(node.transition, axis=1)))
            object.__setattr__(self, "_plan", plan)
        return plan

    def sample_realization(self, rng: np.random.Generator) -> dict[str, int]:
        """Draw one joint realization; maps node id -> raw support index."""
        out: dict[str, int] = {}
        top = self.k - 1
        for node_id, prev, cum in self._sampling_plan():
            row = cum if prev is None else cum[out[prev]]
            out[node_id] = min(int(np.searchsorted(row, rng.random(), side="right")), top)
        return out

    def realization_from_values(self, values: Mapping[str, float] | Sequence[float]) -> dict[str, int]:
        """Map observed loss values (raw units) onto support indices."""
        if not isinstance(values, Mapping):
            values = {node.id: v for node, v in zip(self.nodes, values)}
        return {node_id: self.support.index_of(v) for node_id, v in values.items()}


@dataclass(frozen=True)
class RolloutResult:
    """Outcome of one policy run on one realization.

    ``realized_loss`` is the served loss in effective units (post-recall min,
    or the last node's loss for no-recall policies); ``loss_index`` is its raw
    support index. ``objective`` = realized_loss + total_cost.
    """

    serve_node: str
    exit_node: str
    inspected: tuple[str, ...]
    realized_loss: float
    loss_index: int
    total_cost: float
    objective: float

    @property
    def exit_index(self) -> int:
        return len(self.inspected)


@dataclass(frozen=True, eq=False)
class TraceDataset:
    """Per-input loss rows (one column per exit) with per-exit cost proxies."""

    losses: np.ndarray  # (T, n)
    costs: np.ndarray  # (n,)
    support: Support | None = None  # set once quantized
    indices: np.ndarray | None = None  # (T, n) support indices, once quantized

    def __post_init__(self):
        losses = np.asarray(self.losses, dtype=float)
        costs = np.asarray(self.costs, dtype=float)
        if losses.ndim != 2 or losses.shape[0] == 0:
            raise InvalidInstanceError("trace must be a nonempty 2-d array")
        if costs.shape != (losses.shape[1],):
            raise InvalidInstanceError("trace costs must have one entry per exit")
        if not np.all(np.isfinite(losses)) or np.any(losses <= 0):
            raise InvalidInstanceError("trace losses must be finite and positive")
        if np.any(costs <= 0):
            raise InvalidInstanceError("trace costs must be strictly positive")
        object.__setattr__(self, "losses", losses)
        object.__setattr__(self, "costs", costs)

    @property
    def num_rows(self) -> int:
        return self.losses.shape[0]

    @property
    def num_exits(self) -> int:
        return self.losses.shape[1]


def _prev_in_line(instance: ExplorationInstance, node: NodeSpec) -> str:
    group = next(g for g in instance.line_groups() if any(n.id == node.id for n in g))
    pos = next(i for i, n in enumerate(group) if n.id == node.id)
    return group[pos - 1].id


# -- instance validation ---------------------------------------------------


def validate_instance(instance: ExplorationInstance) -> ValidationReport:
    """Full invariant check; reports violations instead of raising.

    An instance with an ok report is accepted by every solver module.
    """
    bad: list[str] = []
    k = instance.k
    if not (0.0 <= instance.lam <= 1.0):
        bad.append(f"lambda {instance.lam!r} outside [0, 1]")
    for node in instance.nodes:
        if not math.isfinite(node.cost) or node.cost < 0:
            bad.append(f"node {node.id}: cost must be finite and >= 0")
        has_root = node.root_pmf is not None
        has_trans = node.transition is not None
        if has_root == has_trans:
            bad.append(f"node {node.id}: exactly one of rootPmf/transition required")
            continue
        if has_root:
            bad.extend(f"node {node.id}: {msg}" for msg in check_pmf(node.root_pmf, k))
        else:
            bad.extend(f"node {node.id}: {msg}" for msg in check_stochastic(node.transition, k))

    if instance.topology in ("line", "skipline"):
        bad.extend(_check_line_shape(instance.nodes))
    elif instance.topology == "multiline":
        for group in instance.line_groups():
            bad.extend(_check_line_shape(tuple(group)))
        lines = sorted({int(n.line or 0) for n in instance.nodes})
        if lines != list(range(len(lines))):
            bad.append("multiline line labels must be 0..m-1")
    elif instance.topology == "tree":
        bad.extend(_check_tree_shape(instance))

    if instance.topology == "skipline":
        bad.extend(_check_skip_costs(instance))
    elif instance.skip_costs is not None:
        bad.append("skipCosts only valid for skipline topology")

    return ValidationReport(ok=not bad, violations=tuple(bad))


def _check_line_shape(nodes: Sequence[NodeSpec]) -> list[str]:
    bad = []
    for pos, node in enumerate(nodes):
        if pos == 0 and node.root_pmf is None:
            bad.append(f"node {node.id}: first node of a line needs rootPmf")
        if pos > 0 and node.transition is None:
            bad.append(f"node {node.id}: non-root line node needs a transition")
        if node.parent is not None:
            bad.append(f"node {node.id}: parent field not valid on a line")
    return bad


def _check_tree_shape(instance: ExplorationInstance) -> list[str]:
    bad = []
    ids = {n.id for n in instance.nodes}
    roots = []
    for node in instance.nodes:
        if node.parent is None:
            roots.append(node.id)
            if node.root_pmf is None:
                bad.append(f"node {node.id}: tree root needs rootPmf")
        else:
            if node.parent not in ids:
                bad.append(f"not a tree: node {node.id} has missing parent {node.parent!r}")
            if node.transition is None:
                bad.append(f"node {node.id}: non-root tree node needs a transition")
    if not roots:
        bad.append("not a tree: no root node")
        return bad
    # every node must reach a root through finitely many parent hops
    for node in instance.nodes:
        seen = set()
        cur = node
        while cur.parent is not None:
            if cur.id in seen:
                bad.append(f"not a tree: cycle through node {node.id}")
                break
            seen.add(cur.id)
            if cur.parent not in ids:
                break
            cur = instance.node_by_id(cur.parent)
    return bad


def _check_skip_costs(instance: ExplorationInstance) -> list[str]:
    table = instance.skip_costs
    if table is None:
        return ["skipline topology requires skipCosts"]
    n = instance.n
    bad = []
    if table.n != n:
        bad.append(f"skip cost table covers {table.n} nodes, instance has {n}")
        return bad
    dense = table.dense()
    for i in range(n + 1):
        for j in range(i + 1, n + 1):
            if dense[i, j] <= 0:
                bad.append(f"skip cost c({i},{j}) must be > 0")
    for j, node in enumerate(instance.nodes, start=1):
        if abs(dense[j - 1, j] - node.cost) > 1e-12:
            bad.append(f"node {node.id}: cost differs from skip table c({j - 1},{j})")
    if table.kind == "path_sum":
        for i in range(n + 1):
            for j in range(i + 2, n + 1):
                path = sum(dense[l - 1, l] for l in range(i + 1, j + 1))
                if abs(dense[i, j] - path) > 1e-9:
                    bad.append(f"path_sum violated at c({i},{j})")
    return bad


# -- trace quantization and transition estimation ----------------------------


def quantize_losses(trace: TraceDataset, bins: int) -> tuple[Support, TraceDataset]:
    """Quantize a raw trace onto a shared support of empirical quantile midpoints.

    The support pools all exits. With fewer distinct raw values than ``bins``
    the support shrinks to the distinct values. Every raw loss maps to the
    nearest support level (ties resolve downward), which is monotone.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    pooled = np.sort(trace.losses, axis=None)
    distinct = np.unique(pooled)
    if distinct.size <= bins:
        levels = distinct
    else:
        # midpoint quantile levels (2j - 1) / (2 * bins), sort-and-index convention
        positions = ((2 * np.arange(1, bins + 1) - 1) * pooled.size) // (2 * bins)
        levels = np.unique(pooled[np.clip(positions, 0, pooled.size - 1)])
    support = Support(tuple(levels))
    arr = support.as_array()
    idx = np.searchsorted(arr, trace.losses)
    idx = np.clip(idx, 0, arr.size - 1)
    lower = np.clip(idx - 1, 0, arr.size - 1)
    take_lower = (idx > 0) & (trace.losses - arr[lower] <= arr[idx] - trace.losses)
    indices = np.where(take_lower, lower, idx)
    quantized = TraceDataset(
        losses=arr[indices],
        costs=trace.costs,
        support=support,
        indices=indices.astype(np.int64),
    )
    return support, quantized


def estimate_transitions(trace: TraceDataset, smoothing: float = 1.0) -> tuple[np.ndarray, list[np.ndarray]]:
    """Empirical root pmf and per-exit step kernels from a quantized trace.

    Laplace smoothing with pseudocount ``smoothing`` keeps every row
    stochastic and strictly positive for any smoothing > 0.
    """
    if trace.indices is None or trace.support is None:
        raise InvalidInstanceError("trace must be quantized first")
    if trace.num_rows == 0:
        raise InvalidInstanceError("no data")
    k = trace.support.k
    s = float(smoothing)
    idx = trace.indices
    counts = np.bincount(idx[:, 0], minlength=k).astype(float)
    root = (counts + s) / (counts.sum() + s * k)
    kernels = []
    for col in range(1, trace.num_exits):
        joint = np.zeros((k, k))
        np.add.at(joint, (idx[:, col - 1], idx[:, col]), 1.0)
        denom = joint.sum(axis=1, keepdims=True) + s * k
        kernels.append((joint + s) / denom)
    return root, kernels


def line_instance_from_trace(
    trace: TraceDataset,
    lam: float,
    smoothing: float = 1.0,
    ids: Sequence[str] | None = None,
) -> ExplorationInstance:
    """Build a line instance from a quantized trace (root pmf + estimated kernels)."""
    root, kernels = estimate_transitions(trace, smoothing)
    if ids is None:
        ids = [f"exit_{j + 1}" for j in range(trace.num_exits)]
    nodes = [NodeSpec(id=ids[0], cost=float(trace.costs[0]), root_pmf=root)]
    for j, P in enumerate(kernels, start=1):
        nodes.append(NodeSpec(id=ids[j], cost=float(trace.costs[j]), transition=P))
    return ExplorationInstance("line", trace.support, float(lam), tuple(nodes))
