import math

import numpy as np
import pytest

from conftest import make_random_line
from markov_pandora.line import LinePayoff, build_payoff_table, dynamic_index, run_policy
from markov_pandora.model import TOP, ExplorationInstance, UnknownLossLevelError
from markov_pandora.oracles import brute_force_online_optimal, offline_optimal

UNIFORM2 = np.array([0.5, 0.5])


def two_node_uniform(cost=0.1) -> LinePayoff:
    """Support {0,1}, R1 uniform, R2 | R1 uniform (independent), both costs equal."""
    return LinePayoff(
        values=[0.0, 1.0],
        costs=[cost, cost],
        root=UNIFORM2,
        kernels=[np.tile(UNIFORM2, (2, 1))],
    )


def test_single_deterministic_node():
    t = LinePayoff(values=[0.5], costs=[0.1], root=[1.0], kernels=[])
    assert t.phi_at(TOP, None, 1) == pytest.approx(0.6, abs=1e-12)
    assert t.phi_at(0, None, 1) == pytest.approx(0.5, abs=1e-12)  # min(x, 0.6)
    assert t.sigma(None, 1) == pytest.approx(0.6, abs=1e-9)  # indifference x = c + min(x, v)


def test_two_node_uniform_payoffs():
    t = two_node_uniform()
    # oracle: exhaustive backward induction over the 4 outcome paths
    assert t.phi_at(TOP, None, 1) == pytest.approx(0.4, abs=1e-12)
    for s in (0, 1):
        assert t.phi_at(1, s, 2) == pytest.approx(0.6, abs=1e-12)
        assert t.phi_at(0, s, 2) == pytest.approx(0.0, abs=1e-12)
        assert t.sigma(s, 2) == pytest.approx(0.2, abs=1e-9)  # solves 0.5 sigma = 0.1
    assert t.sigma(0, 3) == -math.inf


def test_zero_costs_open_everything():
    rng = np.random.default_rng(0)
    inst = make_random_line(rng, n=4, k=3, lam=1.0, cost_range=(0.0, 0.0))
    t = build_payoff_table(inst)
    assert t.phi_at(TOP, None, 1) == pytest.approx(
        offline_optimal(inst).expected_loss, abs=1e-12
    )
    # free inspection keeps exploring while improvement is possible: the stop
    # region collapses to the bottom support level
    v1 = float(inst.effective_support()[0])
    for i in (2, 3, 4):
        for s in range(3):
            assert t.sigma(s, i) == pytest.approx(v1, abs=1e-9)


def test_run_policy_two_node_examples():
    t = two_node_uniform()
    r = run_policy(t, {"n1": 0, "n2": 1})
    assert r.inspected == ("n1",) and r.total_cost == pytest.approx(0.1)
    assert r.objective == pytest.approx(0.1)
    r = run_policy(t, {"n1": 1, "n2": 0})
    assert r.inspected == ("n1", "n2") and r.serve_node == "n2"
    assert r.objective == pytest.approx(0.2)


def test_run_policy_single_node_forced_open():
    t = LinePayoff(values=[0.5], costs=[0.1], root=[1.0], kernels=[])
    r = run_policy(t, {"n1": 0})
    assert r.inspected == ("n1",) and r.objective == pytest.approx(0.6)


def test_run_policy_rejects_off_support_values():
    t = two_node_uniform()
    with pytest.raises(UnknownLossLevelError):
        run_policy(t, {"n1": 5, "n2": 0})


def test_table_shape_is_exact():
    rng = np.random.default_rng(1)
    inst = make_random_line(rng, n=6, k=4)
    t = build_payoff_table(inst)
    assert t.phi.shape == (5, 5, 6)
    assert t.phi.size == (inst.k + 1) ** 2 * inst.n


def test_self_consistency_phi_equals_future_expectation():
    rng = np.random.default_rng(2)
    for _ in range(15):
        inst = make_random_line(rng, n=int(rng.integers(1, 5)), k=int(rng.integers(2, 4)))
        t = build_payoff_table(inst)
        for i in range(1, t.n + 1):
            for s in list(range(t.k)) + [None]:
                for x in list(range(t.k)) + [TOP]:
                    fut = t.future(x, s, i)
                    x_val = math.inf if x is TOP else float(t.values[x])
                    expect = math.fsum((min(x_val, m) + c) * p for (m, c), p in fut.items())
                    assert expect == pytest.approx(t.phi_at(x, s, i), abs=1e-9)


def test_future_cost_atoms_are_prefix_sums():
    rng = np.random.default_rng(3)
    inst = make_random_line(rng, n=4, k=3)
    t = build_payoff_table(inst)
    prefixes = {0.0}
    for i in range(1, t.n + 1):
        running = 0.0
        for pos in range(i - 1, t.n):
            running += float(t.costs[pos])
            prefixes.add(running)
    # atom costs from position 1 must be prefix sums of the cost sequence
    fut = t.future(TOP, None, 1)
    allowed = {round(c, 12) for c in prefixes}
    assert {round(c, 12) for _, c in fut} <= allowed


def test_dynamic_index_satisfies_indifference_equation():
    rng = np.random.default_rng(4)
    for _ in range(10):
        inst = make_random_line(rng, n=int(rng.integers(1, 5)), k=3)
        t = build_payoff_table(inst)
        for i in range(1, t.n + 1):
            for s in list(range(t.k)) + [None]:
                sigma = t.sigma(s, i)
                fut = t.future(sigma, s, i, force_open=True)
                gain = math.fsum(max(sigma - m, 0.0) * p for (m, _), p in fut.items())
                cost = math.fsum(c * p for (_, c), p in fut.items())
                assert gain == pytest.approx(cost, abs=1e-9)


def test_phi_is_lipschitz_and_monotone_in_x():
    rng = np.random.default_rng(5)
    for _ in range(25):
        inst = make_random_line(rng)
        t = build_payoff_table(inst)
        for i in range(t.n):
            for s in range(t.k + 1):
                col = t.phi[: t.k, s, i]
                diffs = np.diff(col)
                gaps = np.diff(t.values)
                assert np.all(diffs >= -1e-12)
                assert np.all(diffs <= gaps + 1e-12)


def test_stop_columns_are_thresholds_in_x():
    rng = np.random.default_rng(6)
    for _ in range(25):
        inst = make_random_line(rng)
        t = build_payoff_table(inst)
        for i in range(t.n):
            for s in range(t.k + 1):
                col = t.stop[: t.k, s, i].astype(int)
                assert np.all(np.diff(col) <= 0)  # once continuing, never stop again
                sigma = t.sigma(s if s < t.k else None, i + 1)
                for x in range(t.k):
                    assert bool(col[x]) == (t.values[x] <= sigma + 1e-9)


def test_sigma_nonincreasing_under_line_extension():
    rng = np.random.default_rng(7)
    for _ in range(15):
        k = int(rng.integers(2, 4))
        inst = make_random_line(rng, n=4, k=k)
        prefix = ExplorationInstance("line", inst.support, inst.lam, inst.nodes[:2])
        t_full = build_payoff_table(inst)
        t_prefix = build_payoff_table(prefix)
        for i in (1, 2):
            for s in list(range(k)) + [None]:
                assert t_prefix.sigma(s, i) >= t_full.sigma(s, i) - 1e-9


def test_line_optimality_vs_brute_force():
    rng = np.random.default_rng(8)
    for _ in range(30):
        inst = make_random_line(rng, n=int(rng.integers(1, 6)), k=int(rng.integers(2, 5)))
        t = build_payoff_table(inst)
        oracle = brute_force_online_optimal(inst).expected_loss
        assert t.value == pytest.approx(oracle, abs=1e-9)


def test_dynamic_index_module_function_and_sentinel():
    t = two_node_uniform()
    assert dynamic_index(t, 0, 3) == -math.inf
    assert dynamic_index(t, 0, 2) == pytest.approx(0.2, abs=1e-9)


def test_table_dumps_have_expected_columns():
    t = two_node_uniform()
    table = t.dump_table().splitlines()
    assert table[0] == "i,s,x,phi,stop"
    assert len(table) == 1 + 2 * 3 * 3
    index = t.dump_index().splitlines()
    assert index[0] == "i,s,sigma"
