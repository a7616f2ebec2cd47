"""Rounding of a fractional selection through a bipartite matching.

Each RSU ``j`` gets ``J_j = ceil(sum_i x'_ij)`` slot nodes. Vehicles are
poured into the slots in index order, so every slot carries fractional weight
at most 1, and a maximum-profit matching picks at most one vehicle per slot.

Vehicle indices here are 0-based; RSU ids ``j`` and slot numbers ``s`` are
1-based (column 0 of a selection matrix is local execution).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import offload_delays, tables, utilities
from .scenario import Scenario

ROUNDING_MODES = ("local", "paper")


@dataclass
class BipartiteGraph:
    num_vehicles: int
    slots: dict                 # j -> J_j
    edges: list                 # (i, j, s, weight)
    profit: np.ndarray          # (N, M) profit of assigning vehicle i to RSU j
    local_profit: np.ndarray    # (N,)

    def nodes(self):
        return [(j, s) for j in sorted(self.slots) for s in range(1, self.slots[j] + 1)]

    def node_weights(self):
        w = {node: 0.0 for node in self.nodes()}
        for _, j, s, wt in self.edges:
            w[(j, s)] += wt
        return w

    def vehicle_weights(self):
        w = np.zeros(self.num_vehicles)
        for i, _, _, wt in self.edges:
            w[i] += wt
        return w


@dataclass
class IntegerSelection:
    x: np.ndarray                                # (N, M+1) one-hot rows
    matched_edges: list                          # (i, j, s)
    profit: float = 0.0
    demoted: list = field(default_factory=list)  # vehicles sent back to local after matching

    @property
    def choice(self):
        return np.argmax(self.x, axis=1)


def build_graph(scenario: Scenario, x_prime, cand=None, f=None, profit=None) -> BipartiteGraph:
    """Slot graph of a fractional selection.

    ``profit`` overrides the default edge profit ``alpha*log2(1+beta-T_ij)``
    under ``f``; with neither given, all profits are zero.
    """
    x_prime = np.asarray(x_prime, dtype=float)
    n, m1 = x_prime.shape
    m = m1 - 1
    tab = tables(scenario) if scenario is not None else None
    if profit is not None:
        profit = np.asarray(profit, dtype=float)
    elif f is not None:
        profit = utilities(tab, offload_delays(tab, f))
    else:
        profit = np.zeros((n, m))
    local_profit = utilities(tab, tab.local_delay) if tab is not None else np.zeros(n)
    allowed = np.ones((n, m), bool) if cand is None else np.asarray(cand.mask)

    slots, edges = {}, []
    for j in range(1, m + 1):
        col = np.where(allowed[:, j - 1], x_prime[:, j], 0.0)
        if not (col > 0).any():
            continue
        total = math.fsum(col)
        jj = max(1, math.ceil(total))
        slots[j] = jj
        if jj <= 1:
            edges.extend((i, j, 1, float(col[i])) for i in range(n) if col[i] > 0)
            continue
        s, cum = 1, 0.0
        for i in range(n):
            xi = float(col[i])
            if xi <= 0:
                continue
            if cum + xi < s:
                edges.append((i, j, s, xi))
                cum += xi
                continue
            # i is the threshold vehicle for slot s
            edges.append((i, j, s, s - cum))
            carry = cum + xi - s
            if carry > 0 and s < jj:
                edges.append((i, j, s + 1, carry))
            cum += xi
            s += 1
    graph = BipartiteGraph(n, slots, edges, profit, local_profit)
    for node, wt in graph.node_weights().items():
        if wt > 1 + 1e-9:
            raise RuntimeError(f"slot {node} carries weight {wt} > 1 (graph construction bug)")
    return graph


def hungarian(profit, allowed=None):
    """Maximum-profit matching on a rectangular profit matrix.

    Shortest-augmenting-path Hungarian method with potentials, O(r^2 c).
    Entries that are not ``allowed`` or have negative profit are never used.
    Returns a list of ``(row, col)`` pairs.
    """
    profit = np.asarray(profit, dtype=float)
    r, c = profit.shape
    if r == 0 or c == 0:
        return []
    allowed = np.ones_like(profit, bool) if allowed is None else np.asarray(allowed, bool)
    usable = allowed & (profit >= 0)
    width = max(r, c)
    cost = np.zeros((r + 1, width + 1))
    cost[1:, 1:c + 1] = np.where(usable, -profit, 0.0)

    u = np.zeros(r + 1)
    v = np.zeros(width + 1)
    p = np.zeros(width + 1, dtype=int)     # p[j] = row matched to column j
    way = np.zeros(width + 1, dtype=int)
    for i in range(1, r + 1):
        p[0] = i
        j0 = 0
        minv = np.full(width + 1, np.inf)
        used = np.zeros(width + 1, bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = cost[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    pairs = []
    for col in range(1, c + 1):
        row = p[col]
        if row and usable[row - 1, col - 1]:
            pairs.append((row - 1, col - 1))
    pairs.sort()
    return pairs


def max_profit_matching(graph: BipartiteGraph, mode: str = "local") -> IntegerSelection:
    """Match vehicles to slot nodes; in ``local`` mode each vehicle also has a private
    node worth its local utility, so offloading must beat local execution to be chosen."""
    if mode not in ROUNDING_MODES:
        raise ValueError(f"rounding mode must be one of {ROUNDING_MODES}")
    n = graph.num_vehicles
    m = graph.profit.shape[1]
    nodes = graph.nodes()
    col_of = {node: k for k, node in enumerate(nodes)}
    extra = n if mode == "local" else 0
    prof = np.zeros((n, len(nodes) + extra))
    allowed = np.zeros_like(prof, bool)
    for i, j, s, _ in graph.edges:
        k = col_of[(j, s)]
        if np.isfinite(graph.profit[i, j - 1]):
            prof[i, k] = graph.profit[i, j - 1]
            allowed[i, k] = True
    if mode == "local":
        idx = np.arange(n)
        ok = np.isfinite(graph.local_profit)
        prof[idx[ok], len(nodes) + idx[ok]] = graph.local_profit[ok]
        allowed[idx[ok], len(nodes) + idx[ok]] = True

    x = np.zeros((n, m + 1))
    x[:, 0] = 1.0
    matched, total = [], 0.0
    for i, k in hungarian(prof, allowed):
        total += prof[i, k]
        if k < len(nodes):
            j, s = nodes[k]
            x[i, 0] = 0.0
            x[i, j] = 1.0
            matched.append((i, j, s))
    return IntegerSelection(x=x, matched_edges=matched, profit=float(total))


def round_selection(scenario: Scenario, x_prime, cand, f, mode: str = "local") -> IntegerSelection:
    """Graph construction plus matching; matched vehicles whose latency deadline fails
    under ``f`` are put back to local execution."""
    x_prime = np.asarray(x_prime, dtype=float)
    if np.all((x_prime == 0) | (x_prime == 1)) and np.allclose(x_prime.sum(axis=1), 1):
        sel = IntegerSelection(x=x_prime.copy(), matched_edges=[
            (i, int(j), 1) for i, j in enumerate(np.argmax(x_prime, axis=1)) if j > 0])
    else:
        sel = max_profit_matching(build_graph(scenario, x_prime, cand, f), mode)
    tab = tables(scenario)
    delays = offload_delays(tab, f)
    for i, j, _ in list(sel.matched_edges):
        if not delays[i, j - 1] <= tab.t_max[i]:
            sel.x[i, :] = 0.0
            sel.x[i, 0] = 1.0
            sel.demoted.append(i)
    if sel.demoted:
        sel.matched_edges = [e for e in sel.matched_edges if e[0] not in sel.demoted]
    return sel
