"""Shared random-instance generators for the test suite."""

from __future__ import annotations

import numpy as np

from markov_pandora.model import ExplorationInstance, NodeSpec, SkipCostTable, Support


def random_support(rng: np.random.Generator, k: int) -> Support:
    vals = np.sort(rng.uniform(0.05, 1.0, size=k))
    while np.unique(vals).size < k or np.min(np.diff(vals)) < 1e-3:
        vals = np.sort(rng.uniform(0.05, 1.0, size=k))
    return Support(tuple(float(v) for v in vals))


def random_pmf(rng: np.random.Generator, k: int) -> np.ndarray:
    return rng.dirichlet(np.ones(k))


def random_kernel(rng: np.random.Generator, k: int) -> np.ndarray:
    return np.array([rng.dirichlet(np.ones(k)) for _ in range(k)])


def make_random_line(rng, n=None, k=None, lam=None, cost_range=(0.02, 0.3), prefix="n"):
    n = n if n is not None else int(rng.integers(1, 6))
    k = k if k is not None else int(rng.integers(2, 5))
    lam = lam if lam is not None else float(rng.uniform(0.2, 0.9))
    nodes = [NodeSpec(f"{prefix}1", float(rng.uniform(*cost_range)), root_pmf=random_pmf(rng, k))]
    for i in range(2, n + 1):
        nodes.append(
            NodeSpec(f"{prefix}{i}", float(rng.uniform(*cost_range)), transition=random_kernel(rng, k))
        )
    return ExplorationInstance("line", random_support(rng, k), lam, tuple(nodes))


def make_random_multiline(rng, total=None, k=None, lam=None, lines=2):
    total = total if total is not None else int(rng.integers(2, 7))
    k = k if k is not None else int(rng.integers(2, 4))
    lam = lam if lam is not None else float(rng.uniform(0.2, 0.9))
    sizes = []
    left = total
    for j in range(lines - 1):
        take = int(rng.integers(1, max(2, left - (lines - 1 - j))))
        sizes.append(take)
        left -= take
    sizes.append(max(left, 1))
    nodes = []
    for line_id, size in enumerate(sizes):
        nodes.append(
            NodeSpec(
                f"L{line_id}n1",
                float(rng.uniform(0.02, 0.3)),
                root_pmf=random_pmf(rng, k),
                line=line_id,
            )
        )
        for i in range(2, size + 1):
            nodes.append(
                NodeSpec(
                    f"L{line_id}n{i}",
                    float(rng.uniform(0.02, 0.3)),
                    transition=random_kernel(rng, k),
                    line=line_id,
                )
            )
    return ExplorationInstance("multiline", random_support(rng, k), lam, tuple(nodes))


def make_random_tree(rng, n=None, k=None, lam=None):
    n = n if n is not None else int(rng.integers(2, 8))
    k = k if k is not None else int(rng.integers(2, 4))
    lam = lam if lam is not None else float(rng.uniform(0.2, 0.9))
    nodes = [NodeSpec("t0", float(rng.uniform(0.02, 0.3)), root_pmf=random_pmf(rng, k))]
    for i in range(1, n):
        parent = f"t{int(rng.integers(0, i))}"
        nodes.append(
            NodeSpec(
                f"t{i}",
                float(rng.uniform(0.02, 0.3)),
                transition=random_kernel(rng, k),
                parent=parent,
            )
        )
    return ExplorationInstance("tree", random_support(rng, k), lam, tuple(nodes))


def make_random_skipline(rng, n=None, k=None, lam=None, kind="matrix"):
    n = n if n is not None else int(rng.integers(1, 5))
    k = k if k is not None else int(rng.integers(2, 4))
    lam = lam if lam is not None else float(rng.uniform(0.2, 0.9))
    nodes = [NodeSpec("s1", float(rng.uniform(0.02, 0.3)), root_pmf=random_pmf(rng, k))]
    for i in range(2, n + 1):
        nodes.append(
            NodeSpec(f"s{i}", float(rng.uniform(0.02, 0.3)), transition=random_kernel(rng, k))
        )
    if kind == "path_sum":
        table = SkipCostTable.path_sum([node.cost for node in nodes])
    else:
        m = np.zeros((n + 1, n + 1))
        for i in range(n + 1):
            for j in range(i + 1, n + 1):
                m[i, j] = nodes[j - 1].cost if j == i + 1 else float(rng.uniform(0.01, 0.5))
        table = SkipCostTable.from_matrix(m)
    return ExplorationInstance(
        "skipline", random_support(rng, k), lam, tuple(nodes), skip_costs=table
    )


def make_static_line(rng, n, k, lam=0.5, concentration=4.0, floor=0.05):
    """Line with one shared, strictly positive (hence primitive) kernel."""
    kernel = np.array([rng.dirichlet(np.ones(k) * concentration) + floor for _ in range(k)])
    kernel = kernel / kernel.sum(axis=1, keepdims=True)
    nodes = [NodeSpec("c1", float(rng.uniform(0.02, 0.1)), root_pmf=random_pmf(rng, k))]
    for i in range(2, n + 1):
        nodes.append(NodeSpec(f"c{i}", nodes[0].cost, transition=kernel))
    return ExplorationInstance("line", random_support(rng, k), lam, tuple(nodes)), kernel
