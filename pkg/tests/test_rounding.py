import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linear_sum_assignment

from helpers import make_scenario
from josc_vec.acceptance import brute_force_matching, random_fractional
from josc_vec.rounding import build_graph, hungarian, max_profit_matching, round_selection
from josc_vec.selection import candidate_sets


def test_two_vehicle_slot_example():
    x = np.array([[0.4, 0.6], [0.4, 0.6]])
    g = build_graph(None, x)
    assert g.slots == {1: 2}
    assert [(i, j, s, pytest.approx(w)) for i, j, s, w in g.edges] == [
        (0, 1, 1, 0.6), (1, 1, 1, 0.4), (1, 1, 2, 0.2)]


def test_square_matching_example():
    pairs = hungarian(np.array([[3.0, 1.0], [2.0, 4.0]]))
    assert pairs == [(0, 0), (1, 1)]
    assert sum([[3.0, 1.0], [2.0, 4.0]][i][j] for i, j in pairs) == 7.0


def test_forbidden_entries_not_used():
    profit = np.array([[10.0, 1.0], [9.0, 1.0]])
    allowed = np.array([[False, True], [True, True]])
    assert hungarian(profit, allowed) == [(0, 1), (1, 0)]


def test_negative_profit_left_unmatched():
    assert hungarian(np.array([[-1.0, -2.0]])) == []


@pytest.mark.parametrize("shape", [(1, 1), (2, 5), (5, 2), (4, 4), (6, 3)])
def test_matches_linear_sum_assignment(shape):
    rng = np.random.default_rng(sum(shape))
    for _ in range(20):
        profit = rng.uniform(0, 10, shape)
        pairs = hungarian(profit)
        rows, cols = linear_sum_assignment(profit, maximize=True)
        assert sum(profit[i, j] for i, j in pairs) == pytest.approx(profit[rows, cols].sum(), abs=1e-9)


@settings(max_examples=80)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_matches_brute_force(r, c, seed):
    rng = np.random.default_rng(seed)
    profit = rng.uniform(-2, 10, (r, c))
    allowed = rng.random((r, c)) < 0.7
    pairs = hungarian(profit, allowed)
    assert len({i for i, _ in pairs}) == len(pairs) == len({j for _, j in pairs})
    assert all(allowed[i, j] and profit[i, j] >= 0 for i, j in pairs)
    value = sum(profit[i, j] for i, j in pairs)
    assert value == pytest.approx(brute_force_matching(profit, allowed), abs=1e-9)


@settings(max_examples=150)
@given(st.integers(1, 12), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_graph_weights(n, m, seed):
    x = random_fractional(np.random.default_rng(seed), n, m)
    g = build_graph(None, x)
    for j, jj in g.slots.items():
        assert jj == max(1, int(np.ceil(x[:, j].sum() - 1e-12)))
    weights = g.node_weights()
    assert all(w <= 1 + 1e-9 for w in weights.values())
    per_rsu = {j: sum(w for (jj, _), w in weights.items() if jj == j) for j in g.slots}
    for j, total in per_rsu.items():
        assert total == pytest.approx(x[:, j].sum(), abs=1e-9)
    # every fractional entry is fully represented by the vehicle's edges
    for i in range(n):
        for j in g.slots:
            got = sum(w for ii, jj, _, w in g.edges if ii == i and jj == j)
            assert got == pytest.approx(x[i, j], abs=1e-12)


@settings(max_examples=60)
@given(st.integers(1, 8), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_matching_is_one_hot_and_respects_slots(n, m, seed):
    rng = np.random.default_rng(seed)
    x = random_fractional(rng, n, m)
    g = build_graph(None, x, profit=rng.uniform(0.1, 5.0, (n, m)))
    sel = max_profit_matching(g, mode="paper")
    assert np.all(sel.x.sum(axis=1) == 1)
    assert set(np.unique(sel.x)) <= {0.0, 1.0}
    per_rsu = np.bincount(sel.choice, minlength=m + 1)[1:]
    for j in range(1, m + 1):
        assert per_rsu[j - 1] <= g.slots.get(j, 0)
    for i, j, _ in sel.matched_edges:
        assert x[i, j] > 0


def test_local_mode_keeps_better_local_vehicle():
    x = np.array([[0.5, 0.5]])
    g = build_graph(None, x, profit=np.array([[1.0]]))
    g.local_profit = np.array([2.0])
    assert max_profit_matching(g, mode="local").choice.tolist() == [0]
    assert max_profit_matching(g, mode="paper").choice.tolist() == [1]


def test_unknown_mode():
    g = build_graph(None, np.array([[0.5, 0.5]]))
    with pytest.raises(ValueError):
        max_profit_matching(g, mode="greedy")


def test_integral_input_is_identity():
    scn = make_scenario([(100, 1.0, 9.0), (100, 1.0, 9.0), (50, 0.5, 9.0)], [10.0, 10.0])
    f = np.full((3, 2), 3e9)
    x = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=float)
    sel = round_selection(scn, x, candidate_sets(scn, f), f)
    assert np.array_equal(sel.x, x)
    assert sel.demoted == []


def test_deadline_miss_is_demoted():
    # tight deadline the offloaded task cannot meet with a tiny share
    scn = make_scenario([(100, 1.0, 1.05)], [10.0])
    f = np.array([[1e6]])
    sel = round_selection(scn, np.array([[0.0, 1.0]]), candidate_sets(scn, f), f)
    assert sel.choice.tolist() == [0]
    assert sel.demoted == [0]


def test_matching_value_is_optimal_over_slot_assignments():
    rng = np.random.default_rng(3)
    x = random_fractional(rng, 5, 2)
    profit = rng.uniform(0.1, 5.0, (5, 2))
    g = build_graph(None, x, profit=profit)
    sel = max_profit_matching(g, mode="paper")
    nodes = g.nodes()
    best = 0.0
    edge_set = {(i, (j, s)) for i, j, s, _ in g.edges}
    for assign in itertools.product([None] + nodes, repeat=5):
        used = [a for a in assign if a is not None]
        if len(used) != len(set(used)):
            continue
        if all(a is None or (i, a) in edge_set for i, a in enumerate(assign)):
            best = max(best, sum(profit[i, a[0] - 1] for i, a in enumerate(assign) if a))
    assert sel.profit == pytest.approx(best, abs=1e-9)
