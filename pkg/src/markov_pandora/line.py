"""Exact single-line solver: backward-induction payoff table, dynamic indices,
and the with-recall stopping policy.

State of the explorer on a line is (x, s, i): current minimum loss x (TOP
before anything is inspected), previous node's loss s (NONE before node 1),
and the next position i in 1..n+1. The payoff table stores, per state, the
expected total remaining loss Phi under optimal play, the stop indicator, and
(on demand) the joint distribution of the future achieved minimum and future
cost under the optimal stopping time.

Phi satisfies Phi(x, s, i) = min(x, z) with continuation value
z = c_i + sum_y Pr[R_i = y | s] * Phi(min(x, y), y, i+1) and Phi(., ., n+1) = x.
Ties (z == x) stop. The dynamic index sigma(s, i) is the largest x with
Phi(x, s, i) = x; it does not depend on x and the stop rule is the threshold
x <= sigma(s, i).
"""

from __future__ import annotations

import io
import math

import numpy as np

from .model import (
    TOP,
    ExplorationInstance,
    RolloutResult,
    UnknownLossLevelError,
)

NONE_IDX = -1  # "no previous observation" row alias (stored at array index k)

_BISECT_ITERS = 60
_BISECT_TOL = 1e-9


class LinePayoff:
    """Payoff table for one directed line in effective units.

    Arrays are indexed [x_idx, s_idx, pos] with pos = i - 1; x_idx == k is the
    TOP row and s_idx == k is the NONE row (for pos >= 1 the NONE row holds
    the unconditional marginal, which only matters for diagnostics).
    """

    def __init__(self, values, costs, root, kernels, node_ids=None, raw_to_eff=None):
        self.values = np.asarray(values, dtype=float)
        self.costs = np.asarray(costs, dtype=float)
        self.root = np.asarray(root, dtype=float)
        self.kernels = [np.asarray(P, dtype=float) for P in kernels]
        self.k = self.values.size
        self.n = self.costs.size
        if len(self.kernels) != self.n - 1:
            raise ValueError("need one kernel per non-root node")
        self.node_ids = tuple(node_ids) if node_ids else tuple(f"n{i + 1}" for i in range(self.n))
        # raw support index -> effective index (identity unless lambda = 0)
        self.raw_to_eff = (
            np.arange(self.k) if raw_to_eff is None else np.asarray(raw_to_eff, dtype=int)
        )
        self._dists = self._row_distributions()
        self.phi, self.stop = self._backward_induction()
        self._sigma_cache: dict[tuple[int, int], float] = {}
        self._future_cache: dict[tuple, dict] = {}

    # -- construction -------------------------------------------------------

    def _row_distributions(self) -> list[np.ndarray]:
        """Per position, a (k+1, k) matrix of Pr[R_i = y | s] (row k = NONE)."""
        k, n = self.k, self.n
        dists = []
        marginal = self.root
        for pos in range(n):
            D = np.empty((k + 1, k))
            if pos == 0:
                D[:] = self.root
            else:
                D[:k] = self.kernels[pos - 1]
                D[k] = marginal
            dists.append(D)
            if pos < n - 1:
                marginal = marginal @ self.kernels[pos]
        return dists

    def _backward_induction(self) -> tuple[np.ndarray, np.ndarray]:
        k, n = self.k, self.n
        vals_ext = np.append(self.values, np.inf)  # x value per x_idx, TOP = inf
        # min(x, y) as an index: supports are sorted, TOP index k dominates all
        min_idx = np.minimum(np.arange(k + 1)[:, None], np.arange(k)[None, :])
        phi = np.empty((k + 1, k + 1, n))
        stop = np.empty((k + 1, k + 1, n), dtype=bool)
        nxt = vals_ext[min_idx]  # boundary Phi(., ., n+1) evaluated at min(x, y)
        for pos in range(n - 1, -1, -1):
            z = self.costs[pos] + nxt @ self._dists[pos].T  # (k+1, k+1)
            stop[:, :, pos] = vals_ext[:, None] <= z
            phi[:, :, pos] = np.minimum(vals_ext[:, None], z)
            if pos > 0:
                nxt = phi[min_idx, np.arange(k)[None, :], pos]
        return phi, stop

    # -- basic lookups -------------------------------------------------------

    def _s_slot(self, s_idx: int | None) -> int:
        return self.k if s_idx is None or s_idx == NONE_IDX else int(s_idx)

    def _x_slot(self, x) -> int:
        if x is TOP or (isinstance(x, float) and math.isinf(x)):
            return self.k
        return int(x)

    def phi_at(self, x_idx, s_idx, i: int) -> float:
        """Phi at a grid state; ``i`` is 1-based, i = n+1 returns x."""
        if i > self.n:
            return float(np.append(self.values, np.inf)[self._x_slot(x_idx)])
        return float(self.phi[self._x_slot(x_idx), self._s_slot(s_idx), i - 1])

    def stop_at(self, x_idx, s_idx, i: int) -> bool:
        if i > self.n:
            return True
        return bool(self.stop[self._x_slot(x_idx), self._s_slot(s_idx), i - 1])

    # -- off-grid evaluation and the dynamic index ---------------------------

    def continuation(self, x: float, s_idx: int | None, i: int) -> float:
        """Continuation value z(x, s, i) for a real competing level x.

        z is piecewise linear in x: grid observations y <= x re-enter the
        stored table at (y, y, i+1), larger ones keep the real x alive.
        """
        if i > self.n:
            raise ValueError("no node left to open")
        k, n = self.k, self.n
        vals = self.values
        below = vals <= x
        phi_real_next = np.full(k, min(x, np.inf))  # Phi(x, y, n+1) = x
        z_target = None
        for pos in range(n - 1, i - 2, -1):
            if pos == n - 1:
                diag = np.minimum(vals, x)
            else:
                diag = np.where(below, self.phi[np.arange(k), np.arange(k), pos + 1], phi_real_next)
            z_all = self.costs[pos] + self._dists[pos] @ diag  # (k+1,)
            if pos == i - 1:
                z_target = z_all
                break
            phi_real_next = np.minimum(x, z_all[:k])
        return float(z_target[self._s_slot(s_idx)])

    def phi_real(self, x: float, s_idx: int | None, i: int) -> float:
        if i > self.n:
            return x
        return min(x, self.continuation(x, s_idx, i))

    def sigma(self, s_idx: int | None, i: int) -> float:
        """Dynamic index: largest x with Phi(x, s, i) = x (-inf once i > n).

        Bisection on x - z(x, s, i), which is nondecreasing in x; the stop
        rule is exactly x <= sigma(s, i) and sigma does not depend on x.
        """
        if i > self.n:
            return -math.inf
        key = (self._s_slot(s_idx), i)
        if key not in self._sigma_cache:
            # z(x) == x holds on a flat interval when costs vanish; the noise
            # margin pins the comparison to the interval's right edge
            def stops(x: float) -> bool:
                return self.continuation(x, s_idx, i) >= x - 1e-12 * (1.0 + abs(x))

            lo, hi = 0.0, float(self.values[-1] + self.costs[i - 1 :].sum())
            if stops(hi):
                self._sigma_cache[key] = hi
            else:
                for _ in range(_BISECT_ITERS):
                    mid = 0.5 * (lo + hi)
                    if stops(mid):
                        lo = mid
                    else:
                        hi = mid
                    if hi - lo <= _BISECT_TOL:
                        break
                self._sigma_cache[key] = 0.5 * (lo + hi)
        return self._sigma_cache[key]

    @property
    def value(self) -> float:
        """Expected total loss of the optimal policy from scratch."""
        return self.phi_at(TOP, None, 1)

    # -- future (min, cost) distributions ------------------------------------

    def future(self, x, s_idx: int | None, i: int, force_open: bool = False) -> dict[tuple[float, float], float]:
        """Joint distribution of (future min loss, future cost) from a state.

        ``x`` may be a grid index, TOP, or a real competing level. Atoms are
        keyed (min over nodes opened from i on, summed cost); the immediate
        stop atom is (inf, 0). Satisfies
        Phi(x, s, i) = E[min(x, future_min) + future_cost].
        """
        if isinstance(x, float) and not math.isinf(x):
            x_key: object = ("real", x)
            x_val = x
        else:
            slot = self._x_slot(x)
            x_key = slot
            x_val = float(np.append(self.values, np.inf)[slot])
        return self._future(x_key, x_val, self._s_slot(s_idx), i, force_open)

    def _future(self, x_key, x_val, s_slot, i, force_open) -> dict[tuple[float, float], float]:
        if i > self.n:
            return {(math.inf, 0.0): 1.0}
        memo_key = (x_key, s_slot, i, force_open)
        if memo_key in self._future_cache:
            return self._future_cache[memo_key]
        if not force_open:
            if isinstance(x_key, tuple):
                stops = x_val <= self.continuation(x_val, s_slot if s_slot < self.k else None, i)
            else:
                stops = bool(self.stop[x_key, s_slot, i - 1])
            if stops:
                out = {(math.inf, 0.0): 1.0}
                self._future_cache[memo_key] = out
                return out
        row = self._dists[i - 1][s_slot]
        cost = float(self.costs[i - 1])
        out: dict[tuple[float, float], float] = {}
        for y in np.flatnonzero(row > 0):
            y = int(y)
            y_val = float(self.values[y])
            if y_val <= x_val:
                inner = self._future(y, y_val, y, i + 1, False)
            else:
                inner = self._future(x_key, x_val, y, i + 1, False)
            p = float(row[y])
            for (m, c), q in inner.items():
                key = (min(y_val, m), cost + c)
                out[key] = out.get(key, 0.0) + p * q
        self._future_cache[memo_key] = out
        return out

    # -- dumps ----------------------------------------------------------------

    def dump_table(self) -> str:
        """CSV dump ``i,s,x,phi,stop`` (s/x = support values, TOP/NONE labels)."""
        buf = io.StringIO()
        buf.write("i,s,x,phi,stop\n")
        labels_x = [repr(float(v)) for v in self.values] + ["TOP"]
        labels_s = [repr(float(v)) for v in self.values] + ["NONE"]
        for i in range(1, self.n + 1):
            for s in range(self.k + 1):
                for x in range(self.k + 1):
                    buf.write(
                        f"{i},{labels_s[s]},{labels_x[x]},"
                        f"{self.phi[x, s, i - 1]!r},{int(self.stop[x, s, i - 1])}\n"
                    )
        return buf.getvalue()

    def dump_index(self) -> str:
        buf = io.StringIO()
        buf.write("i,s,sigma\n")
        labels_s = [repr(float(v)) for v in self.values] + ["NONE"]
        for i in range(1, self.n + 1):
            for s in range(self.k + 1):
                sig = self.sigma(s if s < self.k else None, i)
                buf.write(f"{i},{labels_s[s]},{sig!r}\n")
        return buf.getvalue()


def build_payoff_table(instance: ExplorationInstance) -> LinePayoff:
    """Payoff table for a validated line instance (effective units)."""
    if instance.topology != "line":
        raise ValueError(f"expected a line instance, got {instance.topology}")
    return _line_payoff_for_nodes(instance, instance.nodes)


def _line_payoff_for_nodes(instance: ExplorationInstance, nodes, entry_row=None) -> LinePayoff:
    """Table for an ordered node group; ``entry_row`` overrides the root pmf
    (used when a line hangs off an observed parent)."""
    values = instance.effective_support()
    costs = [instance.effective_cost(node) for node in nodes]
    if entry_row is not None:
        root = instance.effective_pmf(entry_row)
    else:
        root = instance.effective_pmf(nodes[0].root_pmf)
    kernels = [instance.effective_kernel(node.transition) for node in nodes[1:]]
    raw_to_eff = np.zeros(instance.k, dtype=int) if instance.lam == 0.0 else None
    return LinePayoff(values, costs, root, kernels, node_ids=[n.id for n in nodes], raw_to_eff=raw_to_eff)


def dynamic_index(table: LinePayoff, s_idx: int | None, i: int) -> float:
    """Dynamic index sigma(s, i); -inf sentinel once nothing is left to open."""
    return table.sigma(s_idx, i)


def run_policy(table: LinePayoff, realization) -> RolloutResult:
    """Execute the optimal stopping policy on one realization.

    ``realization`` maps node id -> support index (or is an index sequence).
    Node 1 is always opened; afterwards the policy stops at the first i with
    stop(X, R_{i-1}, i). Each decision is one table lookup.
    """
    if not isinstance(realization, dict):
        realization = {nid: int(v) for nid, v in zip(table.node_ids, realization)}
    x_idx = table.k  # TOP
    s_idx: int | None = None
    inspected: list[str] = []
    total_cost = 0.0
    best_raw = None
    best_node = None
    for pos, node_id in enumerate(table.node_ids):
        i = pos + 1
        if inspected and table.stop_at(x_idx, s_idx, i):
            break
        if node_id not in realization:
            raise UnknownLossLevelError(f"realization missing node {node_id}")
        raw = int(realization[node_id])
        if not 0 <= raw < table.raw_to_eff.size:
            raise UnknownLossLevelError(f"unknown loss level index {raw}")
        y = int(table.raw_to_eff[raw])
        total_cost += float(table.costs[pos])
        inspected.append(node_id)
        if best_raw is None or raw < best_raw:
            best_raw, best_node = raw, node_id
        x_idx = min(x_idx, y)
        s_idx = y
    realized = float(table.values[int(table.raw_to_eff[best_raw])])
    return RolloutResult(
        serve_node=best_node,
        exit_node=inspected[-1],
        inspected=tuple(inspected),
        realized_loss=realized,
        loss_index=best_raw,
        total_cost=total_cost,
        objective=realized + total_cost,
    )
