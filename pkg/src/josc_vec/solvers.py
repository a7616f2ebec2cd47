"""JOSC and the comparison baselines.

``josc`` alternates between selection (relax, solve, round) at a fixed
resource matrix and allocation at a fixed selection. ``gs`` and ``ra`` are
the greedy and nearest-server baselines, and ``oracle`` enumerates every
assignment of a tiny instance.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .allocation import AllocationOptions, AllocationResult, allocate
from .errors import ConvergenceError, InfeasibleSelectionError, OracleLimitError
from .model import choice_to_matrix, selection_delays, tables, utilities
from .rounding import IntegerSelection, round_selection
from .scenario import Scenario
from .selection import candidate_sets, solve_rnlp

ALGORITHMS = ("josc", "gs", "ra", "oracle")


@dataclass
class OuterRecord:
    k: int
    utility: float
    x_changes: int
    inner_iters: int
    rnlp_objective: float = math.nan
    inner_converged: bool = True


@dataclass
class Solution:
    x: IntegerSelection
    f: np.ndarray
    per_vehicle_delay_s: np.ndarray
    per_vehicle_utility: np.ndarray
    system_utility: float
    outer_trace: list = field(default_factory=list)
    feasible: bool = True
    algo_tag: str = "josc"
    inner_iters: int = 0
    allocations: list = field(default_factory=list, repr=False)  # AllocationResult per outer step
    f_reference: np.ndarray | None = field(default=None, repr=False)

    @property
    def choice(self) -> np.ndarray:
        return self.x.choice

    @property
    def x_matrix(self) -> np.ndarray:
        return self.x.x

    def server_counts(self) -> np.ndarray:
        return np.bincount(self.choice, minlength=self.f.shape[1] + 1)[1:]


@dataclass
class JoscOptions:
    max_outer: int = 20
    tol: float = 1e-6
    rho: float | None = None            # None: the scenario's rho
    rounding: str = "local"             # or "paper": no local nodes in the matching
    rnlp_gap: float = 1e-8
    allocation: AllocationOptions = field(default_factory=lambda: AllocationOptions(raise_on_stall=False))


@dataclass(frozen=True)
class OracleLimits:
    N: int = 4
    M: int = 2


def make_solution(scenario: Scenario, choice, f, algo_tag: str, **extra) -> Solution:
    tab = tables(scenario)
    choice = np.asarray(choice, dtype=int)
    f = np.asarray(f, dtype=float)
    delays = selection_delays(tab, choice, f)
    util = utilities(tab, delays)
    x = choice_to_matrix(choice, tab.m)
    sel = IntegerSelection(x=x, matched_edges=[(i, int(j), 1) for i, j in enumerate(choice) if j > 0])
    sol = Solution(sel, f, delays, util, float(math.fsum(util)), algo_tag=algo_tag, **extra)
    sol.feasible = not feasibility_violations(scenario, sol)
    return sol


def feasibility_violations(scenario: Scenario, sol, latency_tol: float = 1e-6,
                           capacity_tol: float = 1e-9) -> list:
    """Human-readable list of violated constraints; empty when the solution is feasible.

    Latency within ``latency_tol`` seconds, one-hot rows and binary entries exactly,
    capacity and box constraints within ``capacity_tol * F_j``.
    """
    tab = tables(scenario)
    x = np.asarray(getattr(sol, "x_matrix", sol.x))
    f = np.asarray(sol.f, dtype=float)
    out = []
    if x.shape != (tab.n, tab.m + 1) or f.shape != (tab.n, tab.m):
        return [f"shape mismatch: x {x.shape}, f {f.shape}"]
    if not np.all((x == 0) | (x == 1)):
        out.append("selection entries are not binary")
    if not np.all(x.sum(axis=1) == 1):
        bad = np.nonzero(x.sum(axis=1) != 1)[0]
        out.append(f"vehicles {(bad + 1).tolist()} do not select exactly one option")
    if out:
        return out
    choice = np.argmax(x, axis=1)
    delays = selection_delays(tab, choice, f)
    late = np.nonzero(~(delays <= tab.t_max + latency_tol))[0]
    if late.size:
        out.append(f"vehicles {(late + 1).tolist()} miss their deadline")
    cap_tol = capacity_tol * tab.capacity
    load = (x[:, 1:] * f).sum(axis=0)
    over = np.nonzero(load > tab.capacity + cap_tol)[0]
    if over.size:
        out.append(f"RSUs {(over + 1).tolist()} exceed capacity")
    if np.any(f < -cap_tol[None, :]) or np.any(f > tab.capacity[None, :] + cap_tol[None, :]):
        out.append("resource entries outside [0, F_j]")
    return out


def _allocate_with_demotion(scenario: Scenario, choice, opts: AllocationOptions):
    """Allocate, sending the vehicle named by each infeasibility back to local execution."""
    choice = np.array(choice, dtype=int)
    demoted = []
    while True:
        try:
            res = allocate(scenario, choice, opts)
            return choice, res, demoted
        except InfeasibleSelectionError as e:
            if choice[e.vehicle] == 0:
                raise
            choice[e.vehicle] = 0
            demoted.append(e.vehicle)
        except ConvergenceError as e:
            return choice, e.best, demoted


def _reference_f(tab, choice, f_alloc):
    """Resource matrix for the next selection step.

    Selected pairs keep their allocated share; every other pair is priced at
    the share it would get by joining, F_j / (n_j + 1).
    """
    counts = np.bincount(choice, minlength=tab.m + 1)[1:]
    f = np.broadcast_to(tab.capacity / (counts + 1.0), (tab.n, tab.m)).copy()
    off = np.nonzero(choice > 0)[0]
    f[off, choice[off] - 1] = f_alloc[off, choice[off] - 1]
    return f


def josc(scenario: Scenario, opts: JoscOptions | None = None) -> Solution:
    opts = JoscOptions() if opts is None else opts
    tab = tables(scenario)
    n = tab.n
    f_ref = np.broadcast_to(tab.capacity / n, (n, tab.m)).copy()
    prev_choice = np.zeros(n, dtype=int)
    best = make_solution(scenario, prev_choice, np.zeros((n, tab.m)), "josc", f_reference=f_ref)
    if not best.feasible:
        raise AssertionError("all-local selection must be feasible for a valid scenario")
    prev_u = best.system_utility
    trace, allocs = [], []
    x_prev_frac = None
    inner_total = 0
    for k in range(1, opts.max_outer + 1):
        cand = candidate_sets(scenario, f_ref, opts.rho)
        try:
            frac = solve_rnlp(scenario, f_ref, cand, x0=x_prev_frac, gap_tol=opts.rnlp_gap)
        except ConvergenceError as e:
            frac = e.best
        x_prev_frac = frac.x_prime
        sel = round_selection(scenario, frac.x_prime, cand, f_ref, opts.rounding)
        choice, res, _ = _allocate_with_demotion(scenario, sel.choice, opts.allocation)
        allocs.append(res)
        inner_total += res.iterations
        sol = make_solution(scenario, choice, res.f, "josc", f_reference=f_ref)
        u = sol.system_utility
        changes = int(np.count_nonzero(choice != prev_choice))
        trace.append(OuterRecord(k, u, changes, res.iterations, frac.objective_value, res.converged))
        if sol.feasible and u > best.system_utility:
            best = sol
        f_ref = _reference_f(tab, choice, res.f)
        # x^(0) and f^(0) are arbitrary, so a fixed point needs two computed iterates
        if k > 1 and changes == 0 and abs(u - prev_u) < opts.tol:
            break
        prev_choice, prev_u = choice, u
    best.outer_trace = trace
    best.allocations = allocs
    best.inner_iters = inner_total
    best.f_reference = _reference_f(tab, best.choice, best.f)
    return best


def _deadline_ok(tab, idx, j, f_share) -> np.ndarray:
    return tab.fixed_delay()[idx, j] + tab.cycles[idx] / f_share <= tab.t_max[idx]


def gs(scenario: Scenario) -> Solution:
    """Greedy selection in vehicle order under a provisional equal share F_j / (n_j + 1).

    An RSU is an option only if the newcomer and everyone already there still meet
    their deadlines at that share. Local execution loses ties; lower RSU ids win ties.
    """
    tab = tables(scenario)
    fixed = tab.fixed_delay()
    choice = np.zeros(tab.n, dtype=int)
    members = [[] for _ in range(tab.m)]
    for i in range(tab.n):
        best_j, best_u = 0, float(utilities(tab, tab.local_delay[i]))
        for j in range(tab.m):
            share = tab.capacity[j] / (len(members[j]) + 1)
            if not _deadline_ok(tab, np.array([i] + members[j]), j, share).all():
                continue
            u = float(utilities(tab, fixed[i, j] + tab.cycles[i] / share))
            if u >= best_u if best_j == 0 else u > best_u:
                best_j, best_u = j + 1, u
        choice[i] = best_j
        if best_j:
            members[best_j - 1].append(i)
    f = np.zeros((tab.n, tab.m))
    for j in range(tab.m):
        if members[j]:
            f[members[j], j] = tab.capacity[j] / len(members[j])
    return make_solution(scenario, choice, f, "gs")


def nearest_rsu(scenario: Scenario, anchor_m: float = 0.0) -> int:
    """1-based id of the RSU closest to a road position (lower id on ties)."""
    pos = np.array([r.position_m for r in scenario.rsus])
    return int(np.argmin(np.abs(pos - anchor_m))) + 1


def ra(scenario: Scenario, opts: AllocationOptions | None = None) -> Solution:
    """Every vehicle offloads to the RSU nearest to where it enters the road;
    resources are then allocated optimally. Vehicles that cannot fit go local."""
    opts = AllocationOptions(raise_on_stall=False) if opts is None else opts
    tab = tables(scenario)
    choice = np.full(tab.n, nearest_rsu(scenario), dtype=int)
    choice, res, _ = _allocate_with_demotion(scenario, choice, opts)
    sol = make_solution(scenario, choice, res.f, "ra", inner_iters=res.iterations)
    sol.allocations = [res]
    return sol


# --- exhaustive oracle ------------------------------------------------------------

def _grid_best(tab, idx, j, step=1e-3):
    """Best equal-or-better split of server j among ``idx`` on a grid of ``step * F_j``.

    Utility increases in every share, so the whole capacity is handed out and the
    last vehicle takes the remainder. Returns ``(utility, g)`` or ``(-inf, None)``.
    """
    k = tab.cycles[idx] / tab.capacity[j]
    h = 1.0 + tab.beta - tab.fixed_delay()[idx, j]
    budget = tab.t_max[idx] - tab.fixed_delay()[idx, j]
    grid = np.arange(1, int(round(1.0 / step))) * step
    if len(idx) == 1:
        pts = np.ones((1, 1))
    elif len(idx) == 2:
        pts = np.stack([grid, 1.0 - grid], axis=1)
    else:
        a, b = np.meshgrid(grid, grid, indexing="ij")
        keep = a + b < 1.0 - step / 2
        pts = np.stack([a[keep], b[keep], 1.0 - a[keep] - b[keep]], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = np.all(k / pts <= budget, axis=1)
        arg = h - k / pts
        ok &= np.all(arg > 0, axis=1)
        val = np.where(ok, tab.alpha * np.log2(np.where(arg > 0, arg, 1.0)).sum(axis=1), -np.inf)
    if not ok.any():
        return -math.inf, None
    p = int(np.argmax(val))
    return float(val[p]), pts[p]


def oracle(scenario: Scenario, limits: OracleLimits | None = None,
           opts: AllocationOptions | None = None, grid_step: float = 1e-3) -> Solution:
    """Best integer solution by enumerating all (M+1)^N assignments.

    Each server's subproblem depends only on the set of vehicles on it, so the
    optimum for every (server, subset) pair is computed once: by the dual method,
    and for up to three vehicles also by a grid search, keeping the better point.
    """
    limits = OracleLimits() if limits is None else limits
    tab = tables(scenario)
    if tab.n > limits.N or tab.m > limits.M:
        raise OracleLimitError(
            f"oracle refused: N={tab.n}, M={tab.m} exceeds limits N<={limits.N}, M<={limits.M}")
    opts = AllocationOptions(raise_on_stall=False, keep_trace=False) if opts is None else opts
    local_u = utilities(tab, tab.local_delay)
    cache = {}

    def server_best(j, subset):
        key = (j, subset)
        if key in cache:
            return cache[key]
        idx = np.array(subset)
        choice = np.zeros(tab.n, dtype=int)
        choice[idx] = j + 1
        out = (-math.inf, None)
        try:
            res = allocate(scenario, choice, opts)
            u = res.utility - float(local_u[choice == 0].sum())
            out = (u, res.f[idx, j])
        except InfeasibleSelectionError:
            pass
        except ConvergenceError as e:
            out = (e.best.utility - float(local_u[choice == 0].sum()), e.best.f[idx, j])
        if len(subset) <= 3:
            gu, gg = _grid_best(tab, idx, j, grid_step)
            if gu > out[0]:
                out = (gu, gg * tab.capacity[j])
        cache[key] = out
        return out

    best_u, best_choice, best_f = -math.inf, None, None
    for assign in itertools.product(range(tab.m + 1), repeat=tab.n):
        choice = np.array(assign, dtype=int)
        total = float(local_u[choice == 0].sum())
        f = np.zeros((tab.n, tab.m))
        for j in range(tab.m):
            subset = tuple(int(i) for i in np.nonzero(choice == j + 1)[0])
            if not subset:
                continue
            u, fj = server_best(j, subset)
            total += u
            if not math.isfinite(total):
                break
            f[list(subset), j] = fj
        if total > best_u:
            best_u, best_choice, best_f = total, choice, f
    return make_solution(scenario, best_choice, best_f, "oracle")


def solve(algo: str, scenario: Scenario, **kwargs) -> Solution:
    if algo == "josc":
        return josc(scenario, kwargs.get("josc_opts"))
    if algo == "gs":
        return gs(scenario)
    if algo == "ra":
        return ra(scenario)
    if algo == "oracle":
        return oracle(scenario, kwargs.get("limits"))
    raise ValueError(f"unknown algorithm {algo!r}; expected one of {ALGORITHMS}")
