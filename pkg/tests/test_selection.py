import math
from dataclasses import replace

import cvxpy as cp
import numpy as np
import pytest

from helpers import make_scenario
from josc_vec.errors import ConvergenceError
from josc_vec.model import tables
from josc_vec.scenario import GeneratorParams, generate
from josc_vec.selection import candidate_sets, relaxed_upper_bound, solve_rnlp
from josc_vec.solvers import _reference_f, gs, oracle, ra


def reference_relaxation(scn, f, cand):
    """Same relaxed problem through a generic conic solver."""
    tab = tables(scn)
    n, m = tab.n, tab.m
    mask = cand.mask
    delays = np.where(mask, cand.delays, 0.0)
    x = cp.Variable((n, m + 1))
    cons = [x >= 0, cp.sum(x, axis=1) == 1]
    cons += [x[i, j + 1] == 0 for i in range(n) for j in range(m) if not mask[i, j]]
    cons.append(cp.sum(cp.multiply(x[:, 1:], delays - tab.local_delay[:, None]), axis=1) <= tab.t_prime)
    cons.append(cp.sum(cp.multiply(x[:, 1:], f / tab.capacity), axis=0) <= 1)
    obj = (cp.sum(cp.multiply(mask, cp.log(1 + tab.beta - cp.multiply(x[:, 1:], delays))))
           + cp.sum(cp.log(1 + tab.beta - cp.multiply(x[:, 0], tab.local_delay)))) / math.log(2)
    prob = cp.Problem(cp.Maximize(obj), cons)
    prob.solve(solver="CLARABEL")
    return prob.value - math.log2(1 + tab.beta) * mask.sum()


def f_for_delays(scn, i, delays):
    """Resource row that gives vehicle ``i`` the requested offload delays."""
    tab = tables(scn)
    return tab.cycles[i] / (np.asarray(delays) - tab.fixed_delay()[i])


def test_candidate_threshold_example():
    scn = make_scenario([(100, 1.0, 9.0)], [25.0] * 3, rho=1.3)
    f = f_for_delays(scn, 0, [2.0, 2.5, 5.0])[None, :]
    cand = candidate_sets(scn, f)
    assert cand.members(0) == [1, 2]
    assert cand.best_delay[0] == pytest.approx(2.0)


def test_candidate_rho_one_and_infinity():
    scn = make_scenario([(100, 1.0, 9.0)], [25.0] * 3)
    f = f_for_delays(scn, 0, [2.5, 2.0, 2.0])[None, :]
    assert candidate_sets(scn, f, rho=1.0).members(0) == [2]   # lowest index among ties
    assert candidate_sets(scn, f, rho=math.inf).members(0) == [1, 2, 3]


def test_candidates_contain_argmin():
    scn = generate(3)
    tab = tables(scn)
    rng = np.random.default_rng(1)
    f = tab.capacity[None, :] * rng.uniform(0.01, 1.0, (tab.n, tab.m))
    cand = candidate_sets(scn, f)
    assert cand.mask[np.arange(tab.n), np.argmin(cand.delays, axis=1)].all()


def test_single_vehicle_offloads_fully():
    scn = make_scenario([(100, 1.0, 9.0)], [25.0])
    f = np.array([[25e9]])
    res = solve_rnlp(scn, f, candidate_sets(scn, f))
    assert res.x_prime[0, 1] == pytest.approx(1.0, abs=1e-6)
    assert res.x_prime[0, 0] == pytest.approx(0.0, abs=1e-6)
    # grid over the 1-D simplex
    tab = tables(scn)
    t_off = candidate_sets(scn, f).delays[0, 0]
    grid = np.linspace(0, 1, 10001)
    vals = np.log2(1 + tab.beta - grid * t_off) + np.log2(1 + tab.beta - (1 - grid) * tab.local_delay[0])
    assert grid[np.argmax(vals)] == 1.0
    assert res.objective_value == pytest.approx(vals.max() - math.log2(1 + tab.beta), abs=1e-6)


def test_identical_vehicles_split_symmetrically():
    scn = make_scenario([(100, 1.0, 9.0), (100, 1.0, 9.0)], [5.0])
    f = np.full((2, 1), 5e9)      # capacity admits one full offload
    res = solve_rnlp(scn, f, candidate_sets(scn, f))
    assert res.x_prime[0, 1] == pytest.approx(res.x_prime[1, 1], abs=1e-6)
    assert res.x_prime[:, 1].sum() <= 1 + 1e-6


def test_rho_one_slack_is_per_vehicle_argmax():
    scn = generate(5, replace(GeneratorParams(), num_vehicles=6))
    tab = tables(scn)
    f = np.broadcast_to(tab.capacity / 100.0, (tab.n, tab.m)).copy()
    cand = candidate_sets(scn, f, rho=1.0)
    res = solve_rnlp(scn, f, cand)
    best = cand.best_delay
    for i in range(tab.n):
        offload_better = best[i] < tab.local_delay[i]
        assert res.x_prime[i, 0] == pytest.approx(0.0 if offload_better else 1.0, abs=1e-6)


@pytest.mark.parametrize("seed, n", [(0, 3), (1, 8), (2, 20), (3, 40), (4, 12)])
def test_matches_reference_solver(seed, n):
    scn = generate(seed, replace(GeneratorParams(), num_vehicles=n))
    tab = tables(scn)
    rng = np.random.default_rng(seed)
    f = tab.capacity[None, :] * rng.uniform(0.02, 0.6, (n, tab.m))
    cand = candidate_sets(scn, f)
    res = solve_rnlp(scn, f, cand)
    assert res.objective_value == pytest.approx(reference_relaxation(scn, f, cand), abs=1e-6)
    assert res.kkt_residual <= 1e-5


@pytest.mark.parametrize("seed", range(6))
def test_output_feasibility(seed):
    scn = generate(seed, replace(GeneratorParams(), num_vehicles=30))
    tab = tables(scn)
    rng = np.random.default_rng(100 + seed)
    f = tab.capacity[None, :] * rng.uniform(0.05, 0.9, (tab.n, tab.m))
    cand = candidate_sets(scn, f)
    x = solve_rnlp(scn, f, cand).x_prime
    assert np.allclose(x.sum(axis=1), 1.0, atol=1e-8)
    assert np.all(x >= 0)
    assert np.all(x[:, 1:][~cand.mask] == 0.0)
    assert np.all((x[:, 1:] * f).sum(axis=0) <= tab.capacity * (1 + 1e-6))
    lat = (x[:, 1:] * np.where(cand.mask, cand.delays - tab.local_delay[:, None], 0.0)).sum(axis=1)
    assert np.all(lat <= tab.t_prime + 1e-6 * np.abs(tab.t_prime))


def test_history_gap_decreases():
    scn = generate(2)
    tab = tables(scn)
    f = np.broadcast_to(tab.capacity / 8, (tab.n, tab.m)).copy()
    res = solve_rnlp(scn, f, candidate_sets(scn, f))
    gaps = [h[2] for h in res.history]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    assert res.duality_gap < 1e-8


def test_iteration_cap_carries_best_iterate():
    scn = generate(2)
    tab = tables(scn)
    f = np.broadcast_to(tab.capacity / 8, (tab.n, tab.m)).copy()
    with pytest.raises(ConvergenceError) as exc:
        solve_rnlp(scn, f, candidate_sets(scn, f), max_newton=3)
    best = exc.value.best
    assert best is not None
    assert np.allclose(best.x_prime.sum(axis=1), 1.0)


@pytest.mark.parametrize("seed", range(1, 9))
def test_upper_bounds_integer_solutions_at_same_f(seed):
    """With every RSU a candidate, the relaxation bounds any feasible integer point at its f."""
    n, m = 1 + seed % 4, 1 + seed % 2
    base = GeneratorParams()
    scn = generate(seed, replace(base, num_vehicles=n, num_rsus=m, road_length_m=20.0 * m,
                                 capacities_ghz=base.capacities_ghz[:m]))
    for sol in (gs(scn), ra(scn), oracle(scn)):
        f = _reference_f(tables(scn), sol.choice, sol.f)
        assert relaxed_upper_bound(scn, f, rho=math.inf) >= sol.system_utility - 1e-6
