import math

import numpy as np
import pytest

from conftest import make_random_line, make_random_multiline
from markov_pandora.line import LinePayoff, build_payoff_table, run_policy
from markov_pandora.model import ExplorationInstance, NodeSpec, Support
from markov_pandora.multiline import (
    EquivalentNode,
    MultiLinePolicy,
    OrderingReport,
    contract_line,
    default_three_node_sampler,
    run_multiline_policy,
    verify_three_node_ordering,
)
from markov_pandora.oracles import brute_force_online_optimal


def test_contract_single_deterministic_node():
    t = LinePayoff(values=[0.5], costs=[0.1], root=[1.0], kernels=[])
    eq = contract_line(t, None, 1, stop_level=math.inf)
    assert eq.atoms == ((0.5, 0.1, 1.0),)


def test_contract_two_node_uniform_matches_enumeration():
    uni = np.array([0.5, 0.5])
    t = LinePayoff(values=[0.0, 1.0], costs=[0.1, 0.1], root=uni, kernels=[np.tile(uni, (2, 1))])
    eq = contract_line(t, None, 1, stop_level=math.inf)
    # oracle: enumerate the 4 paths under the policy (stop after R1=0, else open both)
    assert dict(((l, c), p) for l, c, p in eq.atoms) == pytest.approx(
        {(0.0, 0.1): 0.5, (0.0, 0.2): 0.25, (1.0, 0.2): 0.25}
    )


def test_contract_zero_cost_line_cost_marginal_is_zero():
    rng = np.random.default_rng(0)
    inst = make_random_line(rng, n=3, k=3, lam=1.0, cost_range=(0.0, 0.0))
    t = build_payoff_table(inst)
    eq = contract_line(t, None, 1, stop_level=math.inf)
    assert all(c == 0.0 for _, c, _ in eq.atoms)
    assert eq.expected_cost() == 0.0


def test_contract_respects_finite_stop_level():
    uni = np.array([0.5, 0.5])
    t = LinePayoff(values=[0.0, 1.0], costs=[0.1, 0.1], root=uni, kernels=[np.tile(uni, (2, 1))])
    # competing level below sigma(NONE, 1): policy opens nothing
    eq = contract_line(t, None, 1, stop_level=0.0)
    assert eq.atoms == ((math.inf, 0.0, 1.0),)


def test_equivalent_node_sigma_examples():
    assert EquivalentNode(((0.5, 0.1, 1.0),)).sigma() == pytest.approx(0.6)
    # uniform over {0,1} with cost 0.1: solves 0.5 s = 0.1
    eq = EquivalentNode(((0.0, 0.1, 0.5), (1.0, 0.1, 0.5)))
    assert eq.sigma() == pytest.approx(0.2)
    # zero cost degenerates to the lowest loss
    eq0 = EquivalentNode(((0.2, 0.0, 0.5), (0.8, 0.0, 0.5)))
    assert eq0.sigma() == pytest.approx(0.2)


def test_two_single_node_lines_open_in_index_order():
    sup = Support((0.1, 0.9))
    nodes = (
        NodeSpec("A", 0.05, root_pmf=np.array([0.5, 0.5]), line=0),
        NodeSpec("B", 0.2, root_pmf=np.array([0.5, 0.5]), line=1),
    )
    inst = ExplorationInstance("multiline", sup, 0.5, nodes)
    policy = MultiLinePolicy(inst)
    sig_a = policy.tables[0].sigma(None, 1)
    sig_b = policy.tables[1].sigma(None, 1)
    assert sig_a < sig_b
    r = policy.run({"A": 1, "B": 0})
    assert r.inspected[0] == "A"


def test_single_line_reduces_to_line_policy():
    rng = np.random.default_rng(1)
    for _ in range(10):
        inst = make_random_line(rng, n=4, k=3)
        policy = MultiLinePolicy(inst)
        table = build_payoff_table(inst)
        assert policy.expected_value() == pytest.approx(table.value, abs=1e-9)
        for _ in range(20):
            realization = inst.sample_realization(rng)
            a = policy.run(realization)
            b = run_policy(table, realization)
            assert a.inspected == b.inspected
            assert a.objective == pytest.approx(b.objective, abs=1e-12)


def test_multiline_optimality_vs_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(40):
        inst = make_random_multiline(rng, total=int(rng.integers(2, 7)), k=int(rng.integers(2, 4)))
        policy = MultiLinePolicy(inst)
        oracle = brute_force_online_optimal(inst).expected_loss
        assert policy.expected_value() == pytest.approx(oracle, abs=1e-9)


def test_exhausted_lines_stop_and_return_best():
    sup = Support((0.4, 0.9))
    nodes = (
        NodeSpec("A", 0.01, root_pmf=np.array([0.5, 0.5]), line=0),
        NodeSpec("B", 0.01, root_pmf=np.array([0.5, 0.5]), line=1),
    )
    inst = ExplorationInstance("multiline", sup, 0.5, nodes)
    r = run_multiline_policy(inst, {"A": 1, "B": 1})
    assert set(r.inspected) == {"A", "B"}
    assert r.realized_loss == pytest.approx(0.5 * 0.9)


def test_contraction_fidelity_against_monte_carlo():
    rng = np.random.default_rng(3)
    inst = make_random_line(rng, n=3, k=3)
    table = build_payoff_table(inst)
    eq = contract_line(table, None, 1, stop_level=math.inf)
    samples = 100_000
    counts: dict[tuple[float, float], int] = {}
    for _ in range(samples):
        realization = inst.sample_realization(rng)
        r = run_policy(table, realization)
        key = (r.realized_loss, round(r.total_cost, 12))
        counts[key] = counts.get(key, 0) + 1
    for loss, cost, p in eq.atoms:
        key = (loss, round(cost, 12))
        observed = counts.get(key, 0) / samples
        bound = 3.0 * math.sqrt(p * (1 - p) / samples)
        assert abs(observed - p) <= bound + 1e-12


# -- three-node ordering --------------------------------------------------------


def test_three_node_classical_independent_ordering():
    # C independent of (A, B), strict sigma ordering: index order wins
    A = EquivalentNode(((0.1, 0.02, 0.5), (0.9, 0.02, 0.5)))
    B = EquivalentNode(((0.2, 0.1, 0.5), (0.8, 0.1, 0.5)))
    C = EquivalentNode(((0.15, 0.3, 0.5), (0.85, 0.3, 0.5)))
    assert A.sigma() < B.sigma() < C.sigma()
    family = {(ia, ib): C for ia in range(2) for ib in range(2)}
    report = verify_three_node_ordering(lambda rng: (A, B, family), trials=1, seed=0)
    assert report.violations == 0


def test_three_node_ordering_random_family():
    report = verify_three_node_ordering(default_three_node_sampler, trials=200, seed=0)
    assert isinstance(report, OrderingReport)
    assert report.trials == 200
    assert report.violations == 0


def test_three_node_tie_between_equal_nodes():
    node = EquivalentNode(((0.3, 0.05, 0.5), (0.7, 0.05, 0.5)))
    family = {(ia, ib): EquivalentNode(((0.5, 0.4, 1.0),)) for ia in range(2) for ib in range(2)}
    from markov_pandora.multiline import _order_value

    for x in (math.inf, 0.8, 0.5):
        v1 = _order_value(("A", "B", "C"), x, node, node, family)
        v2 = _order_value(("B", "A", "C"), x, node, node, family)
        assert v1 == pytest.approx(v2, abs=1e-12)
