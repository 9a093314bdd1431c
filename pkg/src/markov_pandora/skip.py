"""Optimal policy over the transitive closure of a directed line.

From the state (current min x, current node's loss s, current position i) the
policy either stops or jumps to any later node j, paying the pairwise cost
c(i, j). The loss observed after a jump follows the product of the
intermediate step kernels, the unique law consistent with the underlying
Markov chain. The table stores value, stop flag, and best-next-node pointer
per state; execution is pointer chasing with recall over visited nodes only
(skipped nodes were never inspected and cannot be served).
"""

from __future__ import annotations

import io
import math

import numpy as np

from .model import ExplorationInstance, RolloutResult, UnknownLossLevelError
from .model import SkipCostTable  # re-export: part of this module's surface

__all__ = ["SkipCostTable", "SkipPayoff", "build_skip_table", "run_skip_policy"]


class SkipPayoff:
    """Value/stop/next tables over (current min, current loss, current node).

    Position 0 is the dummy root (nothing observed; s = NONE slot). Arrays are
    indexed [x_idx, s_idx, pos] with x_idx == k the TOP row and s_idx == k the
    NONE row (the marginal law for pos >= 1, the only valid row at pos 0).
    """

    def __init__(self, instance: ExplorationInstance):
        if instance.topology != "skipline":
            raise ValueError("expected a skipline instance")
        self.instance = instance
        self.values = instance.effective_support()
        self.k = self.values.size
        self.n = instance.n
        self.node_ids = tuple(node.id for node in instance.nodes)
        self.cost = instance.skip_costs.dense() * (1.0 - instance.lam)
        self._build()

    def _build(self) -> None:
        inst = self.instance
        k, n = self.k, self.n
        kernels = [inst.effective_kernel(node.transition) for node in inst.nodes[1:]]
        marginals = [inst.effective_pmf(inst.nodes[0].root_pmf)]
        for K in kernels:
            marginals.append(marginals[-1] @ K)

        # law of R_j given the value at position i (row k: marginal / NONE),
        # built progressively per i so the whole table costs O(n^2 k^3)
        self.laws = {}
        for i in range(n):
            prod = None
            for j in range(i + 1, n + 1):
                if i == 0:
                    prod = None  # law from the dummy root is the marginal
                elif prod is None:
                    prod = kernels[i - 1]
                else:
                    prod = prod @ kernels[j - 2]
                D = np.empty((k + 1, k))
                if prod is None:
                    D[:] = marginals[j - 1]
                else:
                    D[:k] = prod
                    D[k] = marginals[j - 1]
                self.laws[(i, j)] = D
        vals_ext = np.append(self.values, np.inf)
        min_idx = np.minimum(np.arange(k + 1)[:, None], np.arange(k)[None, :])
        value = np.empty((k + 1, k + 1, n + 1))
        stop = np.empty((k + 1, k + 1, n + 1), dtype=bool)
        nxt = np.zeros((k + 1, k + 1, n + 1), dtype=int)
        value[:, :, n] = vals_ext[:, None]
        stop[:, :, n] = True
        for pos in range(n - 1, -1, -1):
            best = np.full((k + 1, k + 1), np.inf)
            best_j = np.zeros((k + 1, k + 1), dtype=int)
            for j in range(pos + 1, n + 1):
                M = value[min_idx, np.arange(k)[None, :], j]  # (k+1, k)
                cand = self.cost[pos, j] + M @ self.laws[(pos, j)].T
                better = cand < best
                best = np.where(better, cand, best)
                best_j = np.where(better, j, best_j)
            stop[:, :, pos] = vals_ext[:, None] <= best
            value[:, :, pos] = np.minimum(vals_ext[:, None], best)
            nxt[:, :, pos] = np.where(stop[:, :, pos], 0, best_j)
        self.value, self.stop, self.next = value, stop, nxt

    def _x_slot(self, x) -> int:
        if isinstance(x, float) and math.isinf(x):
            return self.k
        return int(x)

    def _s_slot(self, s_idx: int | None) -> int:
        return self.k if s_idx is None else int(s_idx)

    def value_at(self, x, s_idx: int | None, pos: int) -> float:
        return float(self.value[self._x_slot(x), self._s_slot(s_idx), pos])

    @property
    def root_value(self) -> float:
        return float(self.value[self.k, self.k, 0])

    def dump_table(self) -> str:
        buf = io.StringIO()
        buf.write("i,s,x,phi,stop,next\n")
        labels_x = [repr(float(v)) for v in self.values] + ["TOP"]
        labels_s = [repr(float(v)) for v in self.values] + ["NONE"]
        for pos in range(self.n + 1):
            for s in range(self.k + 1):
                for x in range(self.k + 1):
                    buf.write(
                        f"{pos},{labels_s[s]},{labels_x[x]},{self.value[x, s, pos]!r},"
                        f"{int(self.stop[x, s, pos])},{int(self.next[x, s, pos])}\n"
                    )
        return buf.getvalue()


def build_skip_table(instance: ExplorationInstance) -> SkipPayoff:
    return SkipPayoff(instance)


def run_skip_policy(table: SkipPayoff, realization) -> RolloutResult:
    """Chase the stop/next pointers; O(1) per visited node."""
    inst = table.instance
    if not isinstance(realization, dict):
        realization = {nid: int(v) for nid, v in zip(table.node_ids, realization)}
    x_slot, s_slot, pos = table.k, table.k, 0
    inspected: list[str] = []
    total_cost = 0.0
    best_raw, best_node = None, None
    while not table.stop[x_slot, s_slot, pos]:
        j = int(table.next[x_slot, s_slot, pos])
        node_id = table.node_ids[j - 1]
        if node_id not in realization:
            raise UnknownLossLevelError(f"realization missing node {node_id}")
        raw = int(realization[node_id])
        if not 0 <= raw < inst.k:
            raise UnknownLossLevelError(f"unknown loss level index {raw}")
        y = inst.effective_index(raw)
        total_cost += float(table.cost[pos, j])
        inspected.append(node_id)
        if best_raw is None or raw < best_raw:
            best_raw, best_node = raw, node_id
        x_slot = min(x_slot, y)
        s_slot = y
        pos = j
    if best_raw is None:
        raise RuntimeError("skip policy stopped before inspecting anything")
    realized = float(table.values[inst.effective_index(best_raw)])
    return RolloutResult(
        serve_node=best_node,
        exit_node=inspected[-1],
        inspected=tuple(inspected),
        realized_loss=realized,
        loss_index=best_raw,
        total_cost=total_cost,
        objective=realized + total_cost,
    )
