"""Candidate RSU sets and the relaxed (fractional) selection problem.

For a fixed resource matrix ``f`` the relaxed problem is

    max  sum_i sum_{j in B_i + {0}} alpha * log2(1 + beta - x_ij T_ij)
    s.t. x_i0 + sum_{j in B_i} x_ij = 1,  x >= 0
         sum_{j in B_i} x_ij (T_ij - T_i0) <= T_i^max - T_i0      (latency)
         sum_i x_ij f_ij <= F_j                                 (capacity)

It is solved with a log-barrier interior method. The equality is eliminated
through ``x_i0 = 1 - sum_j x_ij``; the remaining unknowns live in an (N, M)
array with non-candidate entries masked out. The Newton system is
block-diagonal per vehicle except for the capacity rows, which couple at most
M columns, so it is solved with the Woodbury identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError
from .model import LN2, Tables, offload_delays, tables
from .scenario import Scenario

SNAP_TOL = 1e-7


@dataclass(frozen=True)
class CandidateSets:
    mask: np.ndarray        # (N, M) bool
    delays: np.ndarray      # (N, M) T_ij under the reference f
    best_delay: np.ndarray  # (N,) min_j T_ij

    def members(self, i: int) -> list:
        """1-based RSU ids in B_i for 0-based vehicle ``i``."""
        return [int(j) + 1 for j in np.nonzero(self.mask[i])[0]]


@dataclass
class FractionalSelection:
    x_prime: np.ndarray          # (N, M+1), column 0 = local
    objective_value: float       # relaxed system utility (comparable to integer utilities)
    raw_objective: float         # sum over B_i + {0} including the log2(1+beta) terms of empty slots
    kkt_residual: float
    duality_gap: float
    newton_steps: int
    history: list = field(default_factory=list)


def candidate_sets(scenario: Scenario, f, rho: float | None = None) -> CandidateSets:
    tab = tables(scenario)
    rho = scenario.rho if rho is None else rho
    delays = offload_delays(tab, f)
    finite = np.isfinite(delays)
    best = np.where(finite.any(axis=1), np.min(np.where(finite, delays, np.inf), axis=1), np.inf)
    if rho == 1:
        mask = np.zeros_like(finite)
        rows = np.nonzero(finite.any(axis=1))[0]
        mask[rows, np.argmin(delays[rows], axis=1)] = True
    else:
        mask = finite & (delays <= rho * best[:, None])
    return CandidateSets(mask=mask, delays=delays, best_delay=best)


class _Barrier:
    """Log-barrier objective for the relaxed selection problem at fixed ``f``."""

    def __init__(self, tab: Tables, f, cand: CandidateSets):
        n, m = tab.n, tab.m
        f = np.asarray(f, dtype=float)
        self.alpha, self.beta = tab.alpha, tab.beta
        self.t0 = tab.local_delay
        self.tp = tab.t_prime
        mask = cand.mask.copy()
        delays = np.where(mask, cand.delays, 0.0)
        a = np.where(mask, delays - self.t0[:, None], 0.0)
        # a vehicle with no latency budget can only use links that do not add delay
        no_budget = self.tp <= 0
        mask[no_budget] &= a[no_budget] <= 0
        self.mask = mask
        self.delays = np.where(mask, delays, 0.0)
        self.a = np.where(mask, a, 0.0)
        self.has_lat = (self.a > 0).any(axis=1)
        w = np.where(mask, f / tab.capacity[None, :], 0.0)
        self.has_cap = w.sum(axis=0) > 1.0
        self.w = np.where(self.has_cap[None, :], w, 0.0)
        self.n_ineq = int(mask.sum()) + n + int(self.has_lat.sum()) + int(self.has_cap.sum())
        self.shape = (n, m)

    # slacks -------------------------------------------------------------------
    def slacks(self, z):
        sloc = 1.0 - z.sum(axis=1)
        slat = np.where(self.has_lat, self.tp - (self.a * z).sum(axis=1), 1.0)
        scap = np.where(self.has_cap, 1.0 - (self.w * z).sum(axis=0), 1.0)
        u = 1.0 + self.beta - z * self.delays
        u0 = 1.0 + self.beta - sloc * self.t0
        return sloc, slat, scap, u, u0

    def feasible(self, z):
        sloc, slat, scap, u, u0 = self.slacks(z)
        return (np.all(z[self.mask] > 0) and np.all(sloc > 0) and np.all(slat > 0)
                and np.all(scap > 0) and np.all(u > 0) and np.all(u0 > 0))

    def objective(self, z):
        _, _, _, u, u0 = self.slacks(z)
        return self.alpha * (np.log2(u)[self.mask].sum() + np.log2(u0).sum())

    def phi(self, z, t):
        sloc, slat, scap, _, _ = self.slacks(z)
        return (-t * self.objective(z) - np.log(z[self.mask]).sum() - np.log(sloc).sum()
                - np.log(slat[self.has_lat]).sum() - np.log(scap[self.has_cap]).sum())

    def grad(self, z, t):
        sloc, slat, scap, u, u0 = self.slacks(z)
        c = self.alpha / LN2
        g = (t * c * self.delays / u - t * c * (self.t0 / u0)[:, None]
             + (1.0 / sloc)[:, None]
             + np.where(self.has_lat, 1.0 / slat, 0.0)[:, None] * self.a
             + np.where(self.has_cap, 1.0 / scap, 0.0)[None, :] * self.w)
        with np.errstate(divide="ignore"):
            g = g - np.where(self.mask, 1.0 / np.where(self.mask, z, 1.0), 0.0)
        return np.where(self.mask, g, 0.0)

    def newton_direction(self, z, t, g):
        n, m = self.shape
        sloc, slat, scap, u, u0 = self.slacks(z)
        c = self.alpha / LN2
        mk = self.mask.astype(float)
        zz = np.where(self.mask, z, 1.0)
        dd = np.where(self.mask, t * c * self.delays ** 2 / u ** 2 + 1.0 / zz ** 2, 1.0)
        cl = t * c * self.t0 ** 2 / u0 ** 2 + 1.0 / sloc ** 2
        el = np.where(self.has_lat, 1.0 / slat ** 2, 0.0)
        blocks = (dd[:, :, None] * np.eye(m)[None, :, :]
                  + cl[:, None, None] * mk[:, :, None] * mk[:, None, :]
                  + el[:, None, None] * self.a[:, :, None] * self.a[:, None, :])
        rhs = np.concatenate([self.w[:, :, None] * np.eye(m)[None, :, :], g[:, :, None]], axis=2)
        sol = np.linalg.solve(blocks, rhs)
        ymat, y = sol[:, :, :m], sol[:, :, m]
        if self.has_cap.any():
            qinv = np.where(self.has_cap, scap ** 2, 1.0)
            s_mat = np.diag(qinv) + np.einsum("ij,ijk->jk", self.w, ymat)
            r = (self.w * y).sum(axis=0)
            corr = np.linalg.solve(s_mat, r)
            y = y - ymat @ corr
        return np.where(self.mask, -y, 0.0)


def _initial_point(bar: _Barrier, x0=None):
    if x0 is not None:
        z = np.where(bar.mask, np.asarray(x0, dtype=float)[:, 1:], 0.0)
        z = np.where(bar.mask, np.maximum(z, 1e-6), 0.0)
        z *= 0.99 / np.maximum(1.0, z.sum(axis=1, keepdims=True) / 0.99)
        if bar.feasible(z):
            return z
    counts = bar.mask.sum(axis=1, keepdims=True)
    z = np.where(bar.mask, 1.0 / (counts + 1.0), 0.0)
    for _ in range(200):
        if bar.feasible(z):
            return z
        z *= 0.5
    raise ConvergenceError("could not find a strictly feasible starting point")


def solve_rnlp(scenario: Scenario, f, cand: CandidateSets, x0=None, gap_tol: float = 1e-8,
               max_newton: int = 2000, mu: float = 10.0) -> FractionalSelection:
    """Solve the relaxed selection problem to a duality-measure below ``gap_tol``."""
    tab = tables(scenario)
    n, m = tab.n, tab.m
    bar = _Barrier(tab, f, cand)
    offset = tab.alpha * np.log2(1.0 + tab.beta) * bar.mask.sum()

    def result(z, kkt, gap, steps, history):
        x = np.zeros((n, m + 1))
        obj = bar.objective(z)
        zs = np.where(z < SNAP_TOL, 0.0, z)
        x[:, 1:] = np.where(bar.mask, zs, 0.0)
        x[:, 0] = 1.0 - x[:, 1:].sum(axis=1)
        return FractionalSelection(x, float(obj - offset), float(obj), kkt, gap, steps, history)

    if not bar.mask.any():
        z = np.zeros((n, m))
        return result(z, 0.0, 0.0, 0, [])

    z = _initial_point(bar, x0)
    t = 1.0
    steps = 0
    history = []
    while True:
        for _ in range(100):
            g = bar.grad(z, t)
            dz = bar.newton_direction(z, t, g)
            dec = -float((g * dz).sum())
            if dec / 2 <= 1e-10:
                break
            s = 1.0
            while not bar.feasible(z + s * dz):
                s *= 0.5
                if s < 1e-20:
                    break
            phi0 = bar.phi(z, t)
            slope = float((g * dz).sum())
            # below the floating-point resolution of phi the Armijo test is noise
            if -slope > 1e-13 * max(1.0, abs(phi0)):
                while s >= 1e-20 and bar.phi(z + s * dz, t) > phi0 + 1e-4 * s * slope:
                    s *= 0.5
            if s < 1e-20:
                break
            z = z + s * dz
            steps += 1
            if steps >= max_newton:
                best = result(z, float(np.abs(bar.grad(z, t)).max() / t), bar.n_ineq / t, steps, history)
                raise ConvergenceError("relaxed selection: Newton iteration cap reached", best)
        gap = bar.n_ineq / t
        history.append((t, float(bar.objective(z)), gap))
        if gap < gap_tol:
            break
        t *= mu
    kkt = float(np.abs(bar.grad(z, t)).max() / t)
    return result(z, kkt, gap, steps, history)


def relaxed_upper_bound(scenario: Scenario, f, rho: float | None = None) -> float:
    """Relaxed optimum at ``f`` with candidate sets built from the same ``f``."""
    cand = candidate_sets(scenario, f, rho)
    return solve_rnlp(scenario, f, cand).objective_value
