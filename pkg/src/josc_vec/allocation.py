"""Computation-resource allocation for a fixed integer selection.

The per-server problem is

    max  sum_i alpha * log2(h_ij - c_i / f_ij)
    s.t. fixed_ij + c_i / f_ij <= T_i^max          (latency, multiplier theta_i)
         sum_i f_ij <= F_j                          (capacity, psi_j)
         f_ij <= F_j,  f_ij >= 0                    (varrho_ij, omega_ij)

with ``h_ij = 1 + beta - fixed_ij`` and ``fixed_ij`` the travel plus upload
time, so the objective plus the local-vehicle constant is exactly the system
utility. ``objective="paper"`` uses ``h_ij = 1 + beta - lam_ij`` instead.

It is solved by projected gradient steps on the Lagrange dual. Resource
quantities are handled per unit of server capacity (``g = f / F_j``), and the
capacity-type multipliers are stored in the same units (``psi * F_j``), so one
step size works across servers of any size. Each dual iterate's primal point
is repaired to exact feasibility and the best repaired point is returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConvergenceError, InfeasibleSelectionError
from .model import LN2, tables, utilities
from .scenario import Scenario

THETA_FLOOR = 1e-12
ADAPT_UP, ADAPT_DOWN, ADAPT_MIN, ADAPT_MAX = 1.2, 0.5, 0.05, 1e4
SCHEDULES = ("constant", "diminishing", "adaptive")
OBJECTIVES = ("delay", "paper")


@dataclass
class AllocationOptions:
    steps: tuple = (0.5, 0.5, 0.5, 0.5)
    schedule: str = "adaptive"          # "constant", "diminishing" (step / sqrt(t)) or "adaptive"
    tol: float = 1e-6
    max_iters: int = 5000
    objective: str = "delay"
    keep_trace: bool = True
    warm_start: bool = True
    raise_on_stall: bool = True


@dataclass
class DualState:
    theta: np.ndarray                   # (N,) seconds^-1 utility
    psi: np.ndarray                     # (M,) per unit capacity
    varrho: np.ndarray                  # (N, M) per unit capacity
    omega: np.ndarray                   # (N, M) per unit capacity
    steps: tuple = (0.01, 0.01, 0.01, 0.01)
    t: int = 0
    capacity: np.ndarray | None = None  # (M,) F_j, converts Hz gradients to capacity units
    theta_unit: np.ndarray | None = None
    psi_unit: np.ndarray | None = None
    schedule: str = "constant"
    gains: tuple | None = None          # per-multiplier step gains for the adaptive schedule
    signs: tuple | None = None

    @classmethod
    def initial(cls, n, m, steps=(0.01, 0.01, 0.01, 0.01), capacity=None):
        return cls(np.full(n, THETA_FLOOR), np.zeros(m), np.zeros((n, m)), np.zeros((n, m)),
                   tuple(steps), 0, None if capacity is None else np.asarray(capacity, float))

    def max_change(self, other: "DualState") -> float:
        return float(max(np.max(np.abs(self.theta - other.theta), initial=0.0),
                         np.max(np.abs(self.psi - other.psi), initial=0.0),
                         np.max(np.abs(self.varrho - other.varrho), initial=0.0),
                         np.max(np.abs(self.omega - other.omega), initial=0.0)))


@dataclass
class IterRecord:
    t: int
    max_change: float
    utility: float           # repaired primal point
    best_utility: float
    violation: float         # worst relative constraint violation of the raw primal step
    mean_f_hz: float
    psi: tuple


@dataclass
class AllocationResult:
    f: np.ndarray
    utility: float
    converged: bool
    iterations: int
    trace: list = field(default_factory=list)
    state: DualState | None = None
    dual_objective: float = math.nan
    cs_residual: float = 0.0


def _choice(x, m):
    x = getattr(x, "x", x)
    x = np.asarray(x)
    if x.ndim == 2:
        return np.argmax(x, axis=1)
    return x.astype(int)


class _Problem:
    """Arrays over the active (vehicle, server) pairs of one selection."""

    def __init__(self, scenario: Scenario, choice, objective="delay"):
        if objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        tab = tables(scenario)
        self.tab = tab
        self.n, self.m = tab.n, tab.m
        self.choice = np.asarray(choice, dtype=int)
        self.vi = np.nonzero(self.choice > 0)[0]
        self.sj = self.choice[self.vi] - 1
        fixed = tab.fixed_delay()[self.vi, self.sj]
        self.cap = tab.capacity[self.sj]
        self.k = tab.cycles[self.vi] / self.cap
        if objective == "delay":
            self.h = 1.0 + tab.beta - fixed
        else:
            self.h = 1.0 + tab.beta - (fixed - tab.local_delay[self.vi])
        self.budget = tab.t_max[self.vi] - fixed
        with np.errstate(divide="ignore"):
            self.lo = np.where(self.budget > 0, self.k / np.where(self.budget > 0, self.budget, 1.0), np.inf)
        self.a_coef = tab.alpha * self.k / LN2
        local = self.choice == 0
        self.constant = float(utilities(tab, tab.local_delay[local]).sum())
        self.counts = np.bincount(self.sj, minlength=self.m)

    @property
    def empty(self):
        return self.vi.size == 0

    def check_feasible(self):
        bad = np.nonzero(~(self.budget > 0))[0]
        if bad.size:
            p = bad[0]
            raise InfeasibleSelectionError(
                int(self.vi[p]), int(self.sj[p]) + 1,
                f"infeasible selection: vehicle {self.vi[p] + 1} cannot meet its deadline on RSU "
                f"{self.sj[p] + 1} even with the whole server")
        need = np.bincount(self.sj, weights=self.lo, minlength=self.m)
        over = np.nonzero(need > 1.0)[0]
        if over.size:
            j = over[0]
            on_j = np.nonzero(self.sj == j)[0]
            p = on_j[np.argmax(self.lo[on_j])]
            raise InfeasibleSelectionError(
                int(self.vi[p]), int(j) + 1,
                f"infeasible selection: RSU {j + 1} cannot meet every deadline; "
                f"vehicle {self.vi[p] + 1} needs the largest share")

    # per-pair pieces ---------------------------------------------------------
    def pair_utility(self, g):
        arg = self.h - self.k / g
        return self.tab.alpha * np.log2(arg)

    def utility(self, g):
        return float(self.pair_utility(g).sum()) + self.constant

    def solve_g(self, theta_p, s_p):
        """Root of the stationarity condition in g, clipped to (k/h, 1]."""
        a, k, h = self.a_coef, self.k, self.h
        b = theta_p * k
        g = np.ones_like(k)
        pos = s_p > 0
        if not pos.any():
            return g
        phi1 = a / (h - k) + b - s_p
        interior = pos & (phi1 < 0)
        if not interior.any():
            return g
        a_, k_, h_, b_, s_ = a[interior], k[interior], h[interior], b[interior], s_p[interior]
        x = (k_ + np.sqrt(k_ * k_ + 4.0 * h_ * a_ / s_)) / (2.0 * h_)
        for _ in range(60):
            den = x * (h_ * x - k_)
            phi = a_ / den + b_ / (x * x) - s_
            dphi = -a_ * (2.0 * h_ * x - k_) / (den * den) - 2.0 * b_ / (x ** 3)
            step = phi / dphi
            x_new = np.minimum(x - step, 1.0)
            done = np.abs(x_new - x) <= 1e-15 * x
            x = x_new
            if done.all():
                break
        g[interior] = x
        return g

    def stationarity_terms(self, g, theta_p, s_p):
        """Terms of d(Lagrangian)/dg at g (utility, latency, capacity-type)."""
        t1 = self.a_coef / (g * (self.h * g - self.k))
        t2 = theta_p * self.k / (g * g)
        return t1, t2, s_p

    def repair(self, g):
        """Feasible point: every vehicle at least its latency share, capacity exactly filled."""
        g = np.maximum(g, self.lo)
        out = g.copy()
        for j in np.nonzero(self.counts)[0]:
            idx = self.sj == j
            lo = self.lo[idx]
            extra = g[idx] - lo
            room = 1.0 - lo.sum()
            tot = extra.sum()
            if tot > 0:
                out[idx] = lo + extra * (room / tot)
            else:
                out[idx] = lo + room / idx.sum()
        return np.minimum(out, 1.0)

    def gradients(self, g):
        """Same quantities as ``dual_gradients`` computed from the pair arrays."""
        d_theta = self.tab.t_prime.copy()
        d_theta[self.vi] = -(self.k / g - self.budget)
        load = np.bincount(self.sj, weights=g, minlength=self.m)
        d_psi = -(load - 1.0) * self.tab.capacity
        d_varrho = np.zeros((self.n, self.m))
        d_omega = np.zeros((self.n, self.m))
        d_varrho[self.vi, self.sj] = -(g - 1.0) * self.cap
        d_omega[self.vi, self.sj] = g * self.cap
        return d_theta, d_psi, d_varrho, d_omega

    def to_matrix(self, g):
        f = np.zeros((self.n, self.m))
        f[self.vi, self.sj] = g * self.cap
        return f


def _scales(prob: _Problem):
    """Step-size units from the dual curvature at the equal split.

    Near the optimum d2D/dpsi2 ~ 1/(2 psi) and d2D/dtheta_i2 ~ k^2 / (2 psi g^3),
    so the units below make a step of 1 roughly a Newton step on each multiplier.
    """
    share = 1.0 / prob.counts[prob.sj]
    g = np.minimum(np.maximum(share, prob.lo * 1.0000001), 1.0)
    marg = prob.a_coef / (g * (prob.h * g - prob.k))
    psi_unit = np.ones(prob.m)
    for j in np.nonzero(prob.counts)[0]:
        psi_unit[j] = marg[prob.sj == j].mean()
    theta_unit = np.ones(prob.n)
    theta_unit[prob.vi] = 2.0 * psi_unit[prob.sj] * g ** 3 / prob.k ** 2
    return theta_unit, psi_unit


def dual_gradients(scenario: Scenario, x, f, state: DualState | None = None, prefix=None):
    """Partial derivatives of the Lagrangian with respect to each multiplier (raw units).

    Returns ``(d_theta (N,), d_psi (M,), d_varrho (N, M), d_omega (N, M))``; entries of
    pairs that are not selected are zero.
    """
    tab = tables(scenario, prefix)
    choice = _choice(x, tab.m)
    f = np.asarray(f, dtype=float)
    xm = np.zeros((tab.n, tab.m))
    off = choice > 0
    xm[np.nonzero(off)[0], choice[off] - 1] = 1.0
    lam = tab.lam()
    with np.errstate(divide="ignore", invalid="ignore"):
        delay_terms = np.where(xm > 0, lam + tab.cycles[:, None] / np.where(f > 0, f, np.nan), 0.0)
    d_theta = -(delay_terms.sum(axis=1) - tab.t_prime)
    d_psi = -((xm * f).sum(axis=0) - tab.capacity)
    d_varrho = np.where(xm > 0, -(f - tab.capacity[None, :]), 0.0)
    d_omega = np.where(xm > 0, f, 0.0)
    return d_theta, d_psi, d_varrho, d_omega


def update_multipliers(state: DualState, gradients) -> DualState:
    """Projected dual step: each multiplier grows with its constraint's violation.

    The violation is minus the Lagrangian partial derivative. Capacity-type
    gradients (Hz) are divided by ``state.capacity`` when it is set.
    """
    d_theta, d_psi, d_varrho, d_omega = (np.asarray(g, dtype=float) for g in gradients)
    k1, k2, k3, k4 = state.steps
    t = state.t + 1
    if state.schedule == "diminishing":
        k1, k2, k3, k4 = (k / math.sqrt(t) for k in (k1, k2, k3, k4))
    cap = np.ones(state.psi.shape) if state.capacity is None else state.capacity
    tu = np.ones(state.theta.shape) if state.theta_unit is None else state.theta_unit
    pu = np.ones(state.psi.shape) if state.psi_unit is None else state.psi_unit
    viol = (-d_theta, -d_psi / cap, -d_varrho / cap[None, :], -d_omega / cap[None, :])
    old = (state.theta, state.psi, state.varrho, state.omega)
    base = (k1 * tu, k2 * pu, k3 * pu[None, :], k4 * pu[None, :])
    gains, signs = state.gains, state.signs
    if state.schedule == "adaptive":
        if gains is None:
            gains = tuple(np.ones_like(v) for v in viol)
            signs = tuple(np.zeros_like(v) for v in viol)
        new_gains, new_signs = [], []
        for v, mu, gain, sign in zip(viol, old, gains, signs):
            sg = np.sign(v)
            moving = (mu > 0) | (v > 0)
            gain = np.where(moving & (sg * sign > 0), gain * ADAPT_UP, gain)
            gain = np.where(sg * sign < 0, gain * ADAPT_DOWN, gain)
            new_gains.append(np.clip(gain, ADAPT_MIN, ADAPT_MAX))
            new_signs.append(np.where(moving, sg, 0.0))
        gains, signs = tuple(new_gains), tuple(new_signs)
        base = tuple(b * gn for b, gn in zip(base, gains))
    theta, psi, varrho, omega = (np.maximum(0.0, mu + b * v) for mu, b, v in zip(old, base, viol))
    theta = np.maximum(THETA_FLOOR, theta)
    return replace(state, theta=theta, psi=psi, varrho=varrho, omega=omega, t=t,
                   gains=gains, signs=signs)


def _pair_multipliers(prob: _Problem, state: DualState):
    theta_p = state.theta[prob.vi]
    s_p = (state.psi[prob.sj] + state.varrho[prob.vi, prob.sj] - state.omega[prob.vi, prob.sj])
    return theta_p, s_p


def primal_step(scenario: Scenario, x, state: DualState, objective: str = "delay") -> np.ndarray:
    """Resource matrix (Hz) maximizing the Lagrangian for fixed multipliers.

    ``state`` multipliers for capacity-type constraints are per unit of capacity.
    """
    prob = _Problem(scenario, _choice(x, tables(scenario).m), objective)
    if prob.empty:
        return np.zeros((prob.n, prob.m))
    if np.any(prob.h - prob.k <= 0) or np.any(prob.h <= 0):
        bad = int(np.argmax(prob.h - prob.k <= 0))
        raise InfeasibleSelectionError(int(prob.vi[bad]), int(prob.sj[bad]) + 1,
                                       "infeasible selection: utility domain is empty")
    return prob.to_matrix(prob.solve_g(*_pair_multipliers(prob, state)))


def stationarity_residual(scenario: Scenario, x, f, state: DualState, objective: str = "delay"):
    """Scaled residual of d(Lagrangian)/d(f_ij) = 0 for every selected pair with f_ij < F_j.

    Each residual is divided by the sum of the magnitudes of its terms.
    """
    prob = _Problem(scenario, _choice(x, tables(scenario).m), objective)
    if prob.empty:
        return np.zeros(0)
    g = np.asarray(f, dtype=float)[prob.vi, prob.sj] / prob.cap
    theta_p, s_p = _pair_multipliers(prob, state)
    t1, t2, t3 = prob.stationarity_terms(g, theta_p, s_p)
    scale = np.abs(t1) + np.abs(t2) + state.psi[prob.sj] + state.varrho[prob.vi, prob.sj] \
        + state.omega[prob.vi, prob.sj]
    res = (t1 + t2 - t3) / scale
    return res[g < 1.0]


def allocate(scenario: Scenario, x, opts: AllocationOptions | None = None) -> AllocationResult:
    opts = AllocationOptions() if opts is None else opts
    tab = tables(scenario)
    prob = _Problem(scenario, _choice(x, tab.m), opts.objective)
    if prob.empty:
        return AllocationResult(np.zeros((tab.n, tab.m)), prob.constant, True, 0)
    prob.check_feasible()

    state = DualState.initial(tab.n, tab.m, opts.steps, tab.capacity)
    if opts.schedule not in SCHEDULES:
        raise ValueError(f"schedule must be one of {SCHEDULES}")
    state.theta_unit, state.psi_unit = _scales(prob)
    state.schedule = opts.schedule
    if opts.warm_start:
        state.psi = np.where(prob.counts > 0, state.psi_unit, 0.0)

    share = 1.0 / prob.counts[prob.sj]
    best_g = prob.repair(np.full_like(prob.k, 0.0) + share)
    best_u = prob.utility(best_g)
    trace = []
    converged = False
    g_raw = best_g
    it = 0
    for it in range(1, opts.max_iters + 1):
        g_raw = prob.solve_g(*_pair_multipliers(prob, state))
        new_state = update_multipliers(state, prob.gradients(g_raw))
        change = new_state.max_change(state)
        state = new_state

        g_rep = prob.repair(g_raw)
        u = prob.utility(g_rep)
        if u > best_u:
            best_u, best_g = u, g_rep
        if opts.keep_trace:
            load = np.bincount(prob.sj, weights=g_raw, minlength=prob.m)
            viol = max(float(np.max(load - 1.0, initial=0.0)),
                       float(np.max((prob.k / g_raw - prob.budget) / prob.budget, initial=0.0)))
            trace.append(IterRecord(it, change, u, best_u, viol, float((g_raw * prob.cap).mean()),
                                    tuple(state.psi.tolist())))
        if change < opts.tol:
            converged = True
            break

    result = AllocationResult(prob.to_matrix(best_g), best_u, converged, it, trace, state)
    result.dual_objective = _dual_value(prob, state)
    load = np.bincount(prob.sj, weights=g_raw, minlength=prob.m)
    cs_cap = state.psi * np.abs(load - 1.0)
    cs_lat = state.theta[prob.vi] * np.abs(prob.k / g_raw - prob.budget)
    result.cs_residual = float(max(cs_cap.max(initial=0.0), cs_lat.max(initial=0.0)))
    if not converged and opts.raise_on_stall:
        raise ConvergenceError(f"dual method did not converge in {opts.max_iters} iterations", result)
    return result


def _dual_value(prob: _Problem, state: DualState) -> float:
    """Dual function at ``state``: the Lagrangian maximized over the box (k/h, 1]."""
    theta_p, s_p = _pair_multipliers(prob, state)
    g = prob.solve_g(theta_p, s_p)
    val = prob.pair_utility(g) - theta_p * (prob.k / g - prob.budget) - s_p * g
    total = float(val.sum()) + prob.constant
    total += float(state.psi[prob.counts > 0].sum())
    total += float(state.varrho[prob.vi, prob.sj].sum())
    return total


def min_shares(scenario: Scenario, choice) -> np.ndarray:
    """Smallest f_ij (Hz) meeting each selected vehicle's deadline; ``inf`` if none does."""
    prob = _Problem(scenario, choice)
    out = np.zeros((prob.n, prob.m))
    out[prob.vi, prob.sj] = prob.lo * prob.cap
    return out
