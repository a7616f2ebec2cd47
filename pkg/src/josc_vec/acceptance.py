"""Acceptance checks, shared by ``josc-vec verify`` and the test suite.

Each check returns a ``CheckResult``; ``run_suite`` runs a named suite and
collects them. Solver runs that several checks need (the tiny instances and
the 100 default scenarios) are computed once per ``Workspace``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from itertools import permutations

import numpy as np

from .allocation import DualState, _Problem, _scales, primal_step, stationarity_residual
from .model import (latency_ok_original, latency_ok_transformed, offload_delay,
                    tables, task_delay)
from .rounding import build_graph, hungarian
from .scenario import GeneratorParams, bundled_config, generate, load_config, load_params
from .selection import candidate_sets, solve_rnlp
from .solvers import gs, josc, oracle, ra

SUITES = ("core", "all")
DEFAULT_SEEDS = tuple(range(1, 101))
TINY_SEEDS = tuple(range(1, 51))
SUITE_BUDGET_S = 300.0
JOSC_BUDGET_S = 10.0
GS_REGRESSION_SEED = 1  # default scenario where JOSC is strictly better than GS


@dataclass
class CheckResult:
    key: str
    title: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0


def tiny_params(seed: int) -> GeneratorParams:
    """Tiny instance family for the oracle comparisons: N in 1..4, M in 1..2."""
    n = 1 + seed % 4
    m = 1 + (seed // 4) % 2
    base = GeneratorParams()
    return replace(base, num_vehicles=n, num_rsus=m, road_length_m=20.0 * m,
                   capacities_ghz=base.capacities_ghz[:m])


def balance_params() -> GeneratorParams:
    base = GeneratorParams()
    return replace(base, num_rsus=4, capacities_ghz=base.capacities_ghz[:4])


# --- solver runs shared between checks -----------------------------------------------

def _tiny_run(seed):
    scn = generate(seed, tiny_params(seed))
    t = time.perf_counter()
    sols = {"oracle": oracle(scn), "josc": josc(scn), "gs": gs(scn), "ra": ra(scn)}
    return scn, sols, time.perf_counter() - t


def _default_run(seed):
    scn = generate(seed, load_params(bundled_config("default")))
    t = time.perf_counter()
    sols = {"josc": josc(scn)}
    wall = time.perf_counter() - t
    sols["gs"] = gs(scn)
    sols["ra"] = ra(scn)
    return scn, sols, wall


def _balance_run(seed):
    scn = generate(seed, balance_params())
    return scn, {"josc": josc(scn), "ra": ra(scn)}, 0.0


@dataclass
class Workspace:
    workers: int = 1
    tiny_seeds: tuple = TINY_SEEDS
    default_seeds: tuple = DEFAULT_SEEDS
    _cache: dict = field(default_factory=dict)

    def _runs(self, name, fn, seeds):
        if name not in self._cache:
            from .harness import parallel_map
            self._cache[name] = parallel_map(fn, list(seeds), self.workers)
        return self._cache[name]

    def tiny(self):
        return self._runs("tiny", _tiny_run, self.tiny_seeds)

    def default(self):
        return self._runs("default", _default_run, self.default_seeds)

    def balance(self):
        return self._runs("balance", _balance_run, self.default_seeds)

    def all_solutions(self):
        for runs in (self.tiny(), self.default(), self.balance()):
            for scn, sols, _ in runs:
                for sol in sols.values():
                    yield scn, sol


# --- individual checks --------------------------------------------------------------

def check_oracle_sandwich(ws: Workspace) -> CheckResult:
    t0 = time.perf_counter()
    runs = ws.tiny()
    bad, close = [], 0
    for seed, (_, s, _) in zip(ws.tiny_seeds, runs):
        o, j = s["oracle"].system_utility, s["josc"].system_utility
        floor = max(s["gs"].system_utility, s["ra"].system_utility)
        if not (o >= j - 1e-9 and j >= floor - 1e-9):
            bad.append(seed)
        close += j >= 0.99 * o
    secs = time.perf_counter() - t0
    frac = close / len(runs)
    ok = not bad and frac >= 0.8 and secs < 60.0
    return CheckResult("1", "oracle >= josc >= max(gs, ra) on tiny instances", ok,
                       f"violations={bad} within_1pct={frac:.2f} runtime={secs:.1f}s", secs)


def check_relaxation_bound(ws: Workspace) -> CheckResult:
    """Relaxed optimum at JOSC's final reference allocation bounds its integer utility."""
    t0 = time.perf_counter()
    worst, bad = math.inf, []
    for seed, (scn, s, _) in zip(ws.tiny_seeds, ws.tiny()):
        sol = s["josc"]
        f = sol.f_reference
        bound = solve_rnlp(scn, f, candidate_sets(scn, f)).objective_value
        margin = bound - sol.system_utility
        worst = min(worst, margin)
        if margin < -1e-6:
            bad.append(seed)
    return CheckResult("2", "relaxed bound >= josc utility", not bad,
                       f"violations={bad} min_margin={worst:.3g}", time.perf_counter() - t0)


def lemma1_disagreements(points: int = 1000, seed: int = 7, lam_prefix_swap: bool = False) -> int:
    """Count points where the original and transformed latency constraints disagree.

    ``lam_prefix_swap`` builds the offsets with the other travel-prefix convention,
    which must break the equivalence (used as a mutation check).
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    bad = 0
    per = points // 4
    for prefix in ("inclusive", "exclusive"):
        other = "exclusive" if prefix == "inclusive" else "inclusive"
        for rep in range(2):
            scn = generate(seed + rep, replace(GeneratorParams(num_vehicles=per), travel_prefix=prefix))
            tab = tables(scn, prefix)
            lam = tables(scn, other if lam_prefix_swap else prefix).lam()
            choice = rng.integers(0, tab.m + 1, size=tab.n)
            # compute times spread around each pair's remaining budget, so both outcomes occur
            budget = np.maximum(0.1, tab.t_max[:, None] - tab.fixed_delay())
            f = tab.cycles[:, None] / (budget * rng.uniform(0.5, 1.5, size=(tab.n, tab.m)))
            a = latency_ok_original(tab, choice, f, slack=1e-9)
            b = latency_ok_transformed(tab, lam, choice, f, slack=1e-9)
            bad += int(np.count_nonzero(a != b))
    return bad


def check_lemma1(ws: Workspace) -> CheckResult:
    t0 = time.perf_counter()
    bad = lemma1_disagreements()
    return CheckResult("3", "original and transformed latency constraints agree", bad == 0,
                       f"disagreements={bad}/1000", time.perf_counter() - t0)


def _transformed_objective(tab, lam, vi, sj, f):
    arg = 1.0 + tab.beta - (tab.cycles[vi] / f + lam[vi, sj])
    return tab.alpha * np.log2(arg).sum()


def max_second_difference(points: int = 1000, seed: int = 11, h: float = 1e-3) -> float:
    """Largest second difference of the transformed allocation objective along any one
    resource entry, at random interior points (resources in units of F_j)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    scn = generate(seed, GeneratorParams(num_vehicles=10))
    tab = tables(scn)
    lam = tab.lam()
    vi = np.arange(tab.n)
    worst = -math.inf
    for _ in range(points):
        sj = rng.integers(0, tab.m, size=tab.n)
        cap = tab.capacity[sj]
        # interior: every log argument stays positive on the stencil
        lo = tab.cycles / np.maximum(1e-9, 1.0 + tab.beta - lam[vi, sj]) / cap
        g = np.maximum(lo * 1.5 + 2 * h, rng.uniform(0.05, 0.95, size=tab.n))
        g = np.minimum(g, 1.0 - 2 * h)
        mid = _transformed_objective(tab, lam, vi, sj, g * cap)
        for i in range(tab.n):
            step = np.zeros(tab.n)
            step[i] = h
            up = _transformed_objective(tab, lam, vi, sj, (g + step) * cap)
            down = _transformed_objective(tab, lam, vi, sj, (g - step) * cap)
            worst = max(worst, (up - 2 * mid + down) / (h * h))
    return worst


def check_concavity(ws: Workspace) -> CheckResult:
    t0 = time.perf_counter()
    worst = max_second_difference()
    return CheckResult("4", "allocation objective is concave (finite differences)", worst <= 1e-8,
                       f"max_second_difference={worst:.3g}", time.perf_counter() - t0)


def max_stationarity_residual(samples: int = 200, seed: int = 13) -> tuple:
    """Worst scaled stationarity residual of primal steps at random multipliers."""
    rng = np.random.Generator(np.random.PCG64(seed))
    worst, interior = 0.0, 0
    for s in range(samples):
        scn = generate(seed + s, GeneratorParams(num_vehicles=8))
        tab = tables(scn)
        choice = rng.integers(0, tab.m + 1, size=tab.n)
        if not (choice > 0).any():
            choice[0] = 1
        prob = _Problem(scn, choice)
        _, psi_unit = _scales(prob)
        state = DualState.initial(tab.n, tab.m, capacity=tab.capacity)
        state.theta = 10.0 ** rng.uniform(-12, 1, size=tab.n)
        state.psi = psi_unit * rng.uniform(0.0, 3.0, size=tab.m)
        state.varrho = rng.uniform(0.0, 0.5, size=(tab.n, tab.m)) * psi_unit[None, :]
        state.omega = rng.uniform(0.0, 0.5, size=(tab.n, tab.m)) * psi_unit[None, :]
        f = primal_step(scn, choice, state)
        res = stationarity_residual(scn, choice, f, state)
        interior += res.size
        if res.size:
            worst = max(worst, float(np.abs(res).max()))
    return worst, interior


def check_stationarity(ws: Workspace) -> CheckResult:
    t0 = time.perf_counter()
    worst, count = max_stationarity_residual()
    return CheckResult("5", "primal step solves the stationarity condition", worst <= 1e-9 and count > 0,
                       f"max_residual={worst:.3g} interior_pairs={count}", time.perf_counter() - t0)


def check_inner_convergence(ws: Workspace) -> CheckResult:
    t0 = time.perf_counter()
    scn = load_config(bundled_config("default"))
    sol = josc(scn)
    iters = [r.iterations for r in sol.allocations]
    ok = all(r.converged and r.iterations <= 5000 for r in sol.allocations)
    return CheckResult("6", "dual loop converges within 5000 iterations", ok,
                       f"iterations_per_outer_step={iters}", time.perf_counter() - t0)


def stabilization_step(utilities, tol=1e-6):
    """First outer iteration k with |U^k - U^(k-1)| < tol, or None."""
    for k in range(1, len(utilities)):
        if abs(utilities[k] - utilities[k - 1]) < tol:
            return k + 1
    return None


def check_outer_convergence(ws: Workspace) -> CheckResult:
    t0 = time.perf_counter()
    steps = [stabilization_step([r.utility for r in s["josc"].outer_trace]) for _, s, _ in ws.default()]
    missing = [seed for seed, k in zip(ws.default_seeds, steps) if k is None or k > 20]
    med = float(np.median([k if k is not None else math.inf for k in steps]))
    ok = not missing and med <= 6
    return CheckResult("7", "outer loop stabilizes (median <= 6, max 20)", ok,
                       f"median={med:g} max={max(k or 99 for k in steps)} unstable={missing}",
                       time.perf_counter() - t0)


def check_baseline_ordering(ws: Workspace) -> CheckResult:
    t0 = time.perf_counter()
    u = {a: np.array([s[a].system_utility for _, s, _ in ws.default()]) for a in ("josc", "gs", "ra")}
    beats_gs = float(np.mean(u["josc"] >= u["gs"]))
    beats_ra = float(np.mean(u["josc"] >= u["ra"]))
    means = {a: float(v.mean()) for a, v in u.items()}
    ok = beats_gs >= 0.9 and beats_ra >= 0.9 and means["josc"] > means["gs"] > means["ra"]
    return CheckResult("8", "josc beats gs and ra", ok,
                       f"josc>=gs {beats_gs:.2f} josc>=ra {beats_ra:.2f} "
                       f"means josc={means['josc']:.4f} gs={means['gs']:.4f} ra={means['ra']:.4f}",
                       time.perf_counter() - t0)


def check_load_balance(ws: Workspace) -> CheckResult:
    t0 = time.perf_counter()
    wins = [float(np.std(s["josc"].server_counts())) < float(np.std(s["ra"].server_counts()))
            for _, s, _ in ws.balance()]
    frac = float(np.mean(wins))
    return CheckResult("9", "josc spreads load more evenly than ra (N=40, M=4)", frac >= 0.9,
                       f"fraction={frac:.2f}", time.perf_counter() - t0)


def brute_force_matching(profit, allowed) -> float:
    """Best matching value by trying every column permutation of the padded square matrix."""
    r, c = profit.shape
    size = max(r, c)
    w = np.zeros((size, size))
    w[:r, :c] = np.where(allowed & (profit >= 0), profit, 0.0)
    perms = np.array(list(permutations(range(size))))
    return float(w[np.arange(size)[None, :], perms].sum(axis=1).max())


def hungarian_mismatches(graphs: int = 200, seed: int = 17) -> list:
    rng = np.random.Generator(np.random.PCG64(seed))
    bad = []
    for g in range(graphs):
        r, c = rng.integers(1, 8, size=2)
        profit = rng.integers(-3, 20, size=(r, c)).astype(float)
        allowed = rng.random((r, c)) < 0.8
        pairs = hungarian(profit, allowed)
        rows = [p[0] for p in pairs]
        cols = [p[1] for p in pairs]
        valid = len(set(rows)) == len(rows) and len(set(cols)) == len(cols) and all(
            allowed[i, j] and profit[i, j] >= 0 for i, j in pairs)
        got = float(sum(profit[i, j] for i, j in pairs))
        if not valid or got != brute_force_matching(profit, allowed):
            bad.append(g)
    return bad


def check_hungarian(ws: Workspace) -> CheckResult:
    t0 = time.perf_counter()
    bad = hungarian_mismatches()
    return CheckResult("10", "hungarian matches exhaustive enumeration", not bad,
                       f"mismatches={bad}", time.perf_counter() - t0)


def random_fractional(rng, n, m):
    x = rng.dirichlet(np.full(m + 1, 0.5), size=n)
    x[rng.random((n, m + 1)) < 0.3] = 0.0
    empty = x.sum(axis=1) == 0
    x[empty, 0] = 1.0
    return x / x.sum(axis=1, keepdims=True)


def rounding_graph_failures(samples: int = 500, seed: int = 19) -> list:
    rng = np.random.Generator(np.random.PCG64(seed))
    bad = []
    for k in range(samples):
        n, m = int(rng.integers(1, 13)), int(rng.integers(1, 5))
        x = random_fractional(rng, n, m)
        graph = build_graph(None, x)
        weights_ok = all(w <= 1 + 1e-9 for w in graph.node_weights().values())
        slots_ok = all(graph.slots.get(j, 0) == math.ceil(math.fsum(x[:, j])) for j in range(1, m + 1))
        if not (weights_ok and slots_ok):
            bad.append(k)
    return bad


def check_rounding_graph(ws: Workspace) -> CheckResult:
    t0 = time.perf_counter()
    bad = rounding_graph_failures()
    return CheckResult("11", "slot graph: weights <= 1 and J_j = ceil(sum x')", not bad,
                       f"failures={bad}", time.perf_counter() - t0)


def independent_violations(scenario, sol) -> list:
    """Feasibility re-check through the scalar model API (independent of the solvers)."""
    out = []
    x = np.asarray(sol.x_matrix)
    f = np.asarray(sol.f)
    if not np.all((x == 0) | (x == 1)):
        out.append("binary")
    if not np.all(x.sum(axis=1) == 1):
        return out + ["one-hot"]
    for i, v in enumerate(scenario.vehicles):
        if task_delay(scenario, i + 1, x[i], f[i]) > v.task.max_latency_s + 1e-6:
            out.append(f"latency vehicle {i + 1}")
    for j, rsu in enumerate(scenario.rsus):
        tol = 1e-9 * rsu.capacity_hz
        if float(np.dot(x[:, j + 1], f[:, j])) > rsu.capacity_hz + tol:
            out.append(f"capacity RSU {j + 1}")
        if np.any(f[:, j] < -tol) or np.any(f[:, j] > rsu.capacity_hz + tol):
            out.append(f"box RSU {j + 1}")
    return out


def check_feasibility(ws: Workspace) -> CheckResult:
    t0 = time.perf_counter()
    checked, bad = 0, []
    for scn, sol in ws.all_solutions():
        if sol.feasible:
            checked += 1
            v = independent_violations(scn, sol)
            if v:
                bad.append((sol.algo_tag, v[:3]))
    unmarked = sum(1 for _, sol in ws.all_solutions() if not sol.feasible)
    return CheckResult("12", "every solution marked feasible satisfies all constraints",
                       not bad and checked > 0,
                       f"checked={checked} violations={bad[:5]} marked_infeasible={unmarked}",
                       time.perf_counter() - t0)


def check_performance(ws: Workspace, suite_start: float) -> CheckResult:
    t0 = time.perf_counter()
    scn = load_config(bundled_config("default"))
    t = time.perf_counter()
    josc(scn)
    single = time.perf_counter() - t
    walls = [w for _, _, w in ws.default()]
    worst = max([single] + walls)
    total = time.perf_counter() - suite_start
    ok = worst < JOSC_BUDGET_S and total < SUITE_BUDGET_S
    return CheckResult("13", "runtime: josc < 10 s on the default scenario, suite < 5 min", ok,
                       f"josc_default={single:.2f}s josc_worst={worst:.2f}s suite={total:.1f}s",
                       time.perf_counter() - t0)


# --- extra checks of the "all" suite ---------------------------------------------------

def check_lemma1_mutation(ws: Workspace) -> CheckResult:
    t0 = time.perf_counter()
    bad = lemma1_disagreements(lam_prefix_swap=True)
    return CheckResult("M1", "swapped offset convention is caught by the equivalence check", bad > 0,
                       f"disagreements_with_swapped_offsets={bad}", time.perf_counter() - t0)


def check_paper_literal(ws: Workspace) -> CheckResult:
    t0 = time.perf_counter()
    scn = load_config(bundled_config("paper_literal"))
    sol = josc(scn)
    tab = tables(scn)
    expected = float(np.sum(tab.alpha * np.log2(1.0 + tab.beta - tab.local_delay)))
    ok = not (sol.choice > 0).any() and abs(sol.system_utility - expected) <= 1e-9
    return CheckResult("M2", "1250 Hz bandwidth forces every vehicle local", ok,
                       f"offloaded={int((sol.choice > 0).sum())} utility={sol.system_utility:.6f}",
                       time.perf_counter() - t0)


def check_gs_regression(ws: Workspace) -> CheckResult:
    t0 = time.perf_counter()
    scn = generate(GS_REGRESSION_SEED, load_params(bundled_config("default")))
    j, g = josc(scn).system_utility, gs(scn).system_utility
    return CheckResult("M3", f"josc strictly beats gs on seed {GS_REGRESSION_SEED}", j > g,
                       f"josc={j:.6f} gs={g:.6f}", time.perf_counter() - t0)


def check_single_vehicle(ws: Workspace) -> CheckResult:
    """N=1, M=1 with ample capacity: JOSC offloads and matches the two-case enumeration."""
    t0 = time.perf_counter()
    scn = generate(3, replace(GeneratorParams(), num_vehicles=1, num_rsus=1, road_length_m=20.0,
                              capacities_ghz=(25.0,)))
    sol = josc(scn)
    off = offload_delay(scn, 1, 1, scn.rsus[0].capacity_hz).total_s
    tab = tables(scn)
    best = max(tab.alpha * math.log2(1 + tab.beta - off),
               tab.alpha * math.log2(1 + tab.beta - tab.local_delay[0]))
    ok = abs(sol.system_utility - best) <= 1e-9 and bool(sol.choice[0] == 1)
    return CheckResult("M4", "single vehicle matches two-case enumeration", ok,
                       f"josc={sol.system_utility:.9f} enumeration={best:.9f}", time.perf_counter() - t0)


CORE_CHECKS = (check_oracle_sandwich, check_relaxation_bound, check_lemma1, check_concavity,
               check_stationarity, check_inner_convergence, check_outer_convergence,
               check_baseline_ordering, check_load_balance, check_hungarian, check_rounding_graph,
               check_feasibility)
EXTRA_CHECKS = (check_lemma1_mutation, check_paper_literal, check_gs_regression, check_single_vehicle)


def run_suite(name: str = "core", workers: int = 1, report=None) -> list:
    """Run a suite; ``report`` is called with each ``CheckResult`` as it finishes."""
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")
    start = time.perf_counter()
    ws = Workspace(workers=workers)
    checks = list(CORE_CHECKS) + (list(EXTRA_CHECKS) if name == "all" else [])
    results = []
    for check in checks:
        res = check(ws)
        results.append(res)
        if report:
            report(res)
    res = check_performance(ws, start)
    results.append(res)
    if report:
        report(res)
    return results


def format_row(res: CheckResult) -> str:
    status = "PASS" if res.passed else "FAIL"
    return f"{status}\t{res.key}\t{res.seconds:.2f}\t{res.title}\t{res.detail}"


REPORT_HEADER = "status\tcriterion\tseconds\ttitle\tdetail"
