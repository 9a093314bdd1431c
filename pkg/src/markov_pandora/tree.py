"""Optimal routing-and-stopping policy for directed trees and forests.

Every unopened node j carries a dynamic index sigma(j, v): the indifference
level of exploring j's subtree alone, conditioned on its parent's observed
loss v. The runtime policy keeps the set of available fronts (children of
inspected nodes plus uninspected roots), probes the front with the minimum
conditional index while the current minimum loss exceeds it, and stops
otherwise, with recall over everything inspected.

Indices are computed bottom-up by iteratively detecting minimal trees (branch
vertices with no branching strictly below) and contracting the part below the
branch vertex into an equivalent node with correlated (loss, cost). The
contraction preserves the branch vertex's own equivalent-loss table; ancestor
values are always evaluated over real fronts, which keeps interleaving between
sibling subtrees available (block-exploring a contracted subtree among live
siblings is strictly suboptimal, so equivalent nodes are never probed as
atoms inside a larger exploration).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .model import ExplorationInstance, RolloutResult, UnknownLossLevelError
from .multiline import EquivalentNode

_SIGMA_ITERS = 80
_SIGMA_TOL = 1e-12


@dataclass(frozen=True)
class TreeTopology:
    """Parent/children maps of a directed forest (roots hang off a dummy root)."""

    parent: dict[str, str | None]
    children: dict[str, tuple[str, ...]]
    roots: tuple[str, ...]

    @classmethod
    def from_instance(cls, instance: ExplorationInstance) -> "TreeTopology":
        parent = {node.id: node.parent for node in instance.nodes}
        raw = instance.tree_children()
        children = {nid: tuple(raw.get(nid, ())) for nid in parent}
        return cls(parent=parent, children=children, roots=tuple(raw[None]))

    def subtree_nodes(self, root: str) -> tuple[str, ...]:
        out = []
        stack = [root]
        while stack:
            nid = stack.pop()
            out.append(nid)
            stack.extend(self.children[nid])
        return tuple(out)

    def branch_vertices(self) -> tuple[str, ...]:
        return tuple(nid for nid, kids in self.children.items() if len(kids) >= 2)


@dataclass(frozen=True)
class MinimalTree:
    root: str
    nodes: tuple[str, ...]  # root plus all strict descendants


def find_minimal_trees(topology: TreeTopology) -> list[MinimalTree]:
    """Deepest branch-rooted subtrees with no branching strictly below.

    A pure line has no branch vertices and yields the empty list.
    """
    branch = set(topology.branch_vertices())
    out = []
    for b in sorted(branch):
        below = set(topology.subtree_nodes(b)) - {b}
        if not (below & branch):
            out.append(MinimalTree(root=b, nodes=topology.subtree_nodes(b)))
    return out


@dataclass(frozen=True)
class ContractionStep:
    """Record of one minimal-tree contraction.

    ``gammas`` maps the root's effective loss index to a family of equivalent
    nodes, one per competing level (queried through ``EquivalentFamily.at``).
    """

    root: str
    contracted: tuple[str, ...]  # the nodes replaced (root excluded)
    replacement: str
    gammas: dict[int, "EquivalentFamily"]


class EquivalentFamily:
    """Equivalent nodes for one contracted front set, per competing level."""

    def __init__(self, solver: "TreeSolver", fronts):
        self._solver = solver
        self._fronts = fronts

    def at(self, competing=math.inf) -> EquivalentNode:
        atoms = self._solver.gamma(competing, self._fronts)
        return EquivalentNode(tuple((l, c, p) for (l, c), p in sorted(atoms.items())))


class TreeSolver:
    """Index tables and exact policy evaluation for one tree/forest instance."""

    def __init__(self, instance: ExplorationInstance):
        if instance.topology != "tree":
            raise ValueError("expected a tree instance")
        self.instance = instance
        self.topology = TreeTopology.from_instance(instance)
        self.values = instance.effective_support()
        self.k = self.values.size
        self.costs = {n.id: instance.effective_cost(n) for n in instance.nodes}
        self._rows: dict[str, np.ndarray] = {}
        for node in instance.nodes:
            if node.root_pmf is not None:
                self._rows[node.id] = instance.effective_pmf(node.root_pmf)
            else:
                self._rows[node.id] = instance.effective_kernel(node.transition)
        self._sigma: dict[tuple[str, int | None], float] = {}
        self._value_cache: dict = {}
        self._gamma_cache: dict = {}

    # -- primitives -----------------------------------------------------------

    def row_for(self, node_id: str, s_idx: int | None) -> np.ndarray:
        row = self._rows[node_id]
        if row.ndim == 1:
            return row
        if s_idx is None:
            raise ValueError(f"node {node_id} needs its parent's value")
        return row[s_idx]

    def _front_key(self, fronts) -> tuple:
        return tuple(sorted(fronts))

    def _x_parts(self, x) -> tuple[object, float]:
        if isinstance(x, tuple):  # ("real", value)
            return x, x[1]
        if isinstance(x, float) and not math.isinf(x):
            return ("real", x), x
        if isinstance(x, float):
            return self.k, math.inf
        slot = int(x)
        return slot, (math.inf if slot == self.k else float(self.values[slot]))

    def _min_x(self, x_key, x_val, y: int):
        y_val = float(self.values[y])
        if y_val <= x_val:
            return y, y_val
        return x_key, x_val

    # -- dynamic index ----------------------------------------------------------

    def sigma(self, node_id: str, s_idx: int | None) -> float:
        """Index of ``node_id``'s subtree conditioned on the parent value."""
        key = (node_id, s_idx)
        if key in self._sigma:
            return self._sigma[key]
        subtree_cost = sum(self.costs[nid] for nid in self.topology.subtree_nodes(node_id))

        # noise margin keeps the bisection on the right edge of the flat
        # indifference interval that appears when costs vanish
        def stops(x: float) -> bool:
            return self._open_value(x, node_id, s_idx) >= x - 1e-12 * (1.0 + abs(x))

        lo, hi = 0.0, float(self.values[-1]) + subtree_cost
        if stops(hi):
            sig = hi
        else:
            for _ in range(_SIGMA_ITERS):
                mid = 0.5 * (lo + hi)
                if stops(mid):
                    lo = mid
                else:
                    hi = mid
                if hi - lo <= _SIGMA_TOL:
                    break
            sig = 0.5 * (lo + hi)
        self._sigma[key] = sig
        return sig

    def _open_value(self, x: float, node_id: str, s_idx: int | None) -> float:
        """Cost of opening the node then exploring its subtree optimally."""
        x_key, x_val = self._x_parts(x)
        row = self.row_for(node_id, s_idx)
        kids = self.topology.children[node_id]
        total = self.costs[node_id]
        for y in np.flatnonzero(row > 0):
            y = int(y)
            nx_key, _ = self._min_x(x_key, x_val, y)
            total += float(row[y]) * self.value(nx_key, frozenset((kid, y) for kid in kids))
        return total

    def phi_node(self, x, node_id: str, s_idx: int | None) -> float:
        """Equivalent loss of the subtree rooted at ``node_id`` against x."""
        return self.value(x, frozenset({(node_id, s_idx)}))

    # -- value and joint-outcome recursions --------------------------------------

    def _pick(self, x_val: float, fronts) -> tuple[str, int | None] | None:
        if not fronts:
            return None
        sig, front = min((self.sigma(nid, s), (nid, s)) for nid, s in sorted(fronts))
        if x_val <= sig:
            return None
        return front

    def value(self, x, fronts: frozenset) -> float:
        """Expected total remaining loss of the index policy from (x, fronts)."""
        x_key, x_val = self._x_parts(x)
        memo = (x_key, self._front_key(fronts))
        if memo in self._value_cache:
            return self._value_cache[memo]
        front = self._pick(x_val, fronts)
        if front is None:
            out = x_val
        else:
            nid, s_idx = front
            row = self.row_for(nid, s_idx)
            kids = self.topology.children[nid]
            rest = fronts - {front}
            out = self.costs[nid]
            for y in np.flatnonzero(row > 0):
                y = int(y)
                nx_key, _ = self._min_x(x_key, x_val, y)
                out += float(row[y]) * self.value(nx_key, rest | {(kid, y) for kid in kids})
        self._value_cache[memo] = out
        return out

    def gamma(self, x, fronts: frozenset) -> dict[tuple[float, float], float]:
        """Joint (achieved min over opened nodes, cost paid) of the policy."""
        x_key, x_val = self._x_parts(x)
        memo = (x_key, self._front_key(fronts))
        if memo in self._gamma_cache:
            return self._gamma_cache[memo]
        front = self._pick(x_val, fronts)
        if front is None:
            out = {(math.inf, 0.0): 1.0}
        else:
            nid, s_idx = front
            row = self.row_for(nid, s_idx)
            kids = self.topology.children[nid]
            rest = fronts - {front}
            cost = self.costs[nid]
            out = {}
            for y in np.flatnonzero(row > 0):
                y = int(y)
                y_val = float(self.values[y])
                nx_key, _ = self._min_x(x_key, x_val, y)
                inner = self.gamma(nx_key, rest | {(kid, y) for kid in kids})
                p = float(row[y])
                for (m, c), q in inner.items():
                    key = (min(y_val, m), cost + c)
                    out[key] = out.get(key, 0.0) + p * q
        self._gamma_cache[memo] = out
        return out


def contract_minimal_tree(solver: TreeSolver, tree: MinimalTree) -> ContractionStep:
    """Contract everything below a minimal tree's root into one equivalent node
    per root-value realization (queried per competing level)."""
    topo = solver.topology
    below = set(tree.nodes) - {tree.root}
    if set(topo.subtree_nodes(tree.root)) != set(tree.nodes) or (
        set(topo.branch_vertices()) & below
    ):
        raise ValueError(f"subtree at {tree.root} is not a minimal tree")
    kids = topo.children[tree.root]
    gammas = {
        v: EquivalentFamily(solver, frozenset((kid, v) for kid in kids))
        for v in range(solver.k)
    }
    return ContractionStep(
        root=tree.root,
        contracted=tuple(sorted(below)),
        replacement=f"eq({tree.root})",
        gammas=gammas,
    )


class TreePolicy:
    """Per-node conditional indices plus the stop/route rule."""

    def __init__(self, solver: TreeSolver, steps: tuple[ContractionStep, ...]):
        self.solver = solver
        self.steps = steps
        self.instance = solver.instance
        self.name = "tree-index"

    @property
    def value(self) -> float:
        roots = frozenset((r, None) for r in self.solver.topology.roots)
        return self.solver.value(self.solver.k, roots)

    def sigma(self, node_id: str, s_idx: int | None) -> float:
        return self.solver.sigma(node_id, s_idx)

    def run(self, realization) -> RolloutResult:
        solver = self.solver
        inst = solver.instance
        fronts = {(r, None) for r in solver.topology.roots}
        x_val = math.inf
        inspected: list[str] = []
        total_cost = 0.0
        best_raw, best_node = None, None
        while True:
            front = solver._pick(x_val, frozenset(fronts))
            if front is None:
                break
            nid, _ = front
            if nid not in realization:
                raise UnknownLossLevelError(f"realization missing node {nid}")
            raw = int(realization[nid])
            if not 0 <= raw < inst.k:
                raise UnknownLossLevelError(f"unknown loss level index {raw}")
            y = inst.effective_index(raw)
            fronts.remove(front)
            fronts.update((kid, y) for kid in solver.topology.children[nid])
            total_cost += solver.costs[nid]
            inspected.append(nid)
            if best_raw is None or raw < best_raw:
                best_raw, best_node = raw, nid
            x_val = min(x_val, float(solver.values[y]))
        realized = float(solver.values[inst.effective_index(best_raw)])
        return RolloutResult(
            serve_node=best_node,
            exit_node=inspected[-1],
            inspected=tuple(inspected),
            realized_loss=realized,
            loss_index=best_raw,
            total_cost=total_cost,
            objective=realized + total_cost,
        )

    def dump(self) -> str:
        """Per-node CSV of (parentValue, currentMin, action in {stop, open:<id>})."""
        solver = self.solver
        buf = io.StringIO()
        buf.write("node,parent_value,current_min,action\n")
        labels = [repr(float(v)) for v in solver.values] + ["TOP"]
        for node in solver.instance.nodes:
            s_choices = [None] if node.parent is None else list(range(solver.k))
            for s_idx in s_choices:
                sig = solver.sigma(node.id, s_idx)
                for x in range(solver.k + 1):
                    x_val = math.inf if x == solver.k else float(solver.values[x])
                    action = "stop" if x_val <= sig else f"open:{node.id}"
                    s_label = "NONE" if s_idx is None else repr(float(solver.values[s_idx]))
                    buf.write(f"{node.id},{s_label},{labels[x]},{action}\n")
        return buf.getvalue()


def solve_tree(instance: ExplorationInstance) -> TreePolicy:
    """Iteratively contract minimal trees, then index the surviving lines.

    Emits the contraction history and a policy with a conditional index for
    every (node, parent value) pair.
    """
    solver = TreeSolver(instance)
    steps: list[ContractionStep] = []
    # working copy of the topology; replacements are bookkeeping only, values
    # always come from the original nodes
    parent = dict(solver.topology.parent)
    children = {nid: list(kids) for nid, kids in solver.topology.children.items()}
    roots = list(solver.topology.roots)
    contracted_away: set[str] = set()

    def working_topology() -> TreeTopology:
        return TreeTopology(
            parent=dict(parent),
            children={nid: tuple(kids) for nid, kids in children.items()},
            roots=tuple(roots),
        )

    guard = 0
    while True:
        minimal = [
            t
            for t in find_minimal_trees(working_topology())
            if t.root not in contracted_away
        ]
        if not minimal:
            break
        guard += 1
        if guard > instance.n:
            raise RuntimeError("contraction loop failed to terminate")
        for t in minimal:
            # the working-graph nodes below t.root stand for their original
            # subtrees; the gamma family explores the full original remainder
            kids = solver.topology.children[t.root]
            gammas = {
                v: EquivalentFamily(solver, frozenset((kid, v) for kid in kids))
                for v in range(solver.k)
            }
            steps.append(
                ContractionStep(
                    root=t.root,
                    contracted=tuple(nid for nid in t.nodes if nid != t.root),
                    replacement=f"eq({t.root})",
                    gammas=gammas,
                )
            )
            for nid in t.nodes:
                if nid != t.root:
                    contracted_away.add(nid)
                    children[nid] = []
            children[t.root] = []
    # dynamic index for the remaining nodes (and every conditioning) is
    # materialized lazily through solver.sigma; warm the cache for the dump
    for node in instance.nodes:
        if node.parent is None:
            solver.sigma(node.id, None)
        else:
            for v in range(solver.k):
                solver.sigma(node.id, v)
    return TreePolicy(solver, tuple(steps))


def run_tree_policy(policy: TreePolicy, realization) -> RolloutResult:
    return policy.run(realization)
