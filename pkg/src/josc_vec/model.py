"""Closed-form delay and utility quantities.

Scalar functions take 1-based vehicle and RSU ids, matching ``Vehicle.id`` and
``Rsu.id``. The array helpers (``tables``, ``offload_delays`` ...) are 0-based
and are what the solvers use. All logarithms are base 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError, LinkUnusableError, UtilityDomainError
from .scenario import RadioParams, Scenario, Task, Vehicle, link_distances

LN2 = math.log(2.0)


@dataclass(frozen=True)
class LinkDelay:
    travel_s: float
    comm_s: float
    compute_s: float
    total_s: float


@dataclass(frozen=True)
class TransformedInstance:
    lam: np.ndarray        # (N, M) fixed delay offset relative to local execution
    t_prime: np.ndarray    # (N,) residual latency budget
    local_delay: np.ndarray


def rate(radio: RadioParams, distance_m: float) -> float:
    gain = distance_m ** (-radio.pathloss_exponent)
    return radio.bandwidth_hz * math.log2(1.0 + radio.tx_power_mw * gain / radio.noise_mw)


def comm_time(task: Task, rate_bps: float) -> float:
    if not rate_bps > 0:
        raise LinkUnusableError("link unusable: zero rate, the task must be computed locally")
    return task.input_bits / rate_bps


def vec_compute_time(task: Task, f_ij: float) -> float:
    if not f_ij > 0:
        raise DomainError(f"computation resource must be positive, got {f_ij}")
    return task.cycles / f_ij


def local_time(vehicle: Vehicle) -> float:
    return vehicle.task.cycles / vehicle.local_capacity_hz


def travel_time(scenario: Scenario, j: int, prefix: str | None = None) -> float:
    """Time to reach RSU ``j``: the sum of segment lengths up to ``j`` over the speed.

    ``prefix="exclusive"`` stops the sum at ``j - 1``.
    """
    prefix = prefix or scenario.travel_prefix
    stop = j if prefix == "inclusive" else j - 1
    return sum(r.segment_length_m for r in scenario.rsus[:stop]) / scenario.speed_mps


def offload_delay(scenario: Scenario, i: int, j: int, f_ij: float) -> LinkDelay:
    task = scenario.vehicles[i - 1].task
    travel = travel_time(scenario, j)
    d = link_distances(scenario)[j - 1]
    comm = comm_time(task, rate(scenario.radio, d))
    compute = vec_compute_time(task, f_ij)
    return LinkDelay(travel, comm, compute, travel + comm + compute)


def task_delay(scenario: Scenario, i: int, x_row, f_row) -> float:
    """Delay of vehicle ``i`` given its one-hot selection row (column 0 = local)."""
    x_row = np.asarray(x_row, dtype=float)
    if x_row.shape != (scenario.num_rsus + 1,):
        raise ContractError(f"selection row must have {scenario.num_rsus + 1} entries")
    if not (np.all((x_row == 0) | (x_row == 1)) and x_row.sum() == 1):
        raise ContractError(f"selection row for vehicle {i} is not one-hot: {x_row.tolist()}")
    j = int(np.argmax(x_row))
    if j == 0:
        return local_time(scenario.vehicles[i - 1])
    return offload_delay(scenario, i, j, float(f_row[j - 1])).total_s


def utility(scenario: Scenario, delay_s: float) -> float:
    arg = 1.0 + scenario.utility_beta - delay_s
    if not arg > 0:
        raise UtilityDomainError(f"utility domain violation: 1 + beta - T = {arg}")
    return scenario.utility_alpha * math.log2(arg)


def system_utility(scenario: Scenario, solution) -> float:
    """Sum of per-vehicle utilities; ``solution`` needs one-hot ``x`` (N, M+1) and ``f`` (N, M)."""
    x = np.asarray(getattr(solution, "x_matrix", getattr(solution, "x", None)))
    f = np.asarray(solution.f)
    return sum(utility(scenario, task_delay(scenario, i + 1, x[i], f[i]))
               for i in range(scenario.num_vehicles))


# --- array form --------------------------------------------------------------------

@dataclass(frozen=True)
class Tables:
    """Per-scenario constant arrays (0-based)."""

    travel: np.ndarray       # (M,)
    comm: np.ndarray         # (N, M)
    cycles: np.ndarray       # (N,)
    local_delay: np.ndarray  # (N,)
    t_max: np.ndarray        # (N,)
    capacity: np.ndarray     # (M,)
    rates: np.ndarray        # (M,)
    alpha: float
    beta: float

    @property
    def n(self):
        return self.cycles.shape[0]

    @property
    def m(self):
        return self.capacity.shape[0]

    @property
    def t_prime(self):
        return self.t_max - self.local_delay

    def fixed_delay(self):
        """Travel plus communication time for every pair, (N, M)."""
        return self.travel[None, :] + self.comm

    def lam(self):
        return self.fixed_delay() - self.local_delay[:, None]


def tables(scenario: Scenario, prefix: str | None = None) -> Tables:
    prefix = prefix or scenario.travel_prefix
    cache = scenario.__dict__.setdefault("_tables_cache", {})
    if prefix in cache:
        return cache[prefix]
    lengths = np.array([r.segment_length_m for r in scenario.rsus])
    cums = np.cumsum(lengths)
    if prefix == "exclusive":
        cums = cums - lengths
    travel = cums / scenario.speed_mps
    rates = np.array([rate(scenario.radio, d) for d in link_distances(scenario)])
    bits = np.array([v.task.input_bits for v in scenario.vehicles])
    with np.errstate(divide="ignore"):
        comm = np.where(rates[None, :] > 0, bits[:, None] / rates[None, :], np.inf)
    cycles = np.array([v.task.cycles for v in scenario.vehicles])
    local = cycles / np.array([v.local_capacity_hz for v in scenario.vehicles])
    t = Tables(
        travel=travel,
        comm=comm,
        cycles=cycles,
        local_delay=local,
        t_max=np.array([v.task.max_latency_s for v in scenario.vehicles]),
        capacity=np.array([r.capacity_hz for r in scenario.rsus]),
        rates=rates,
        alpha=scenario.utility_alpha,
        beta=scenario.utility_beta,
    )
    cache[prefix] = t
    return t


def offload_delays(tab: Tables, f: np.ndarray) -> np.ndarray:
    """T_ij for every pair; ``inf`` where ``f_ij <= 0``."""
    f = np.asarray(f, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        compute = np.where(f > 0, tab.cycles[:, None] / np.where(f > 0, f, 1.0), np.inf)
    return tab.fixed_delay() + compute


def utilities(tab: Tables, delays) -> np.ndarray:
    """alpha * log2(1 + beta - T), ``-inf`` outside the domain."""
    arg = 1.0 + tab.beta - np.asarray(delays, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(arg > 0, tab.alpha * np.log2(np.where(arg > 0, arg, 1.0)), -np.inf)


def selection_delays(tab: Tables, choice: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Per-vehicle delay for a choice vector (0 = local, j = RSU j)."""
    choice = np.asarray(choice, dtype=int)
    delays = tab.local_delay.copy()
    off = choice > 0
    if off.any():
        idx = np.nonzero(off)[0]
        cols = choice[off] - 1
        fi = np.asarray(f, dtype=float)[idx, cols]
        with np.errstate(divide="ignore"):
            delays[idx] = tab.travel[cols] + tab.comm[idx, cols] + np.where(
                fi > 0, tab.cycles[idx] / np.where(fi > 0, fi, 1.0), np.inf)
    return delays


def transform(scenario: Scenario, f=None, prefix: str | None = None) -> TransformedInstance:
    """Constants of the equivalent latency constraint ``sum_j x_ij (lam_ij + c_i/f_ij) <= t'_i``.

    ``f`` is accepted for interface symmetry; lam and t' do not depend on it.
    """
    tab = tables(scenario, prefix)
    lam = tab.lam()
    if not np.all(np.isfinite(lam)):
        raise LinkUnusableError("link unusable: zero rate on some RSU")
    return TransformedInstance(lam=lam, t_prime=tab.t_prime, local_delay=tab.local_delay.copy())


def latency_ok_original(tab: Tables, choice, f, slack=1e-9) -> np.ndarray:
    """Per-vehicle check of T_i <= T_i^max."""
    return selection_delays(tab, choice, f) <= tab.t_max + slack


def latency_ok_transformed(tab: Tables, lam: np.ndarray, choice, f, slack=1e-9) -> np.ndarray:
    """Per-vehicle check of sum_j x_ij (lam_ij + c_i/f_ij) <= t'_i."""
    choice = np.asarray(choice, dtype=int)
    lhs = np.zeros(tab.n)
    off = choice > 0
    idx = np.nonzero(off)[0]
    cols = choice[off] - 1
    lhs[idx] = lam[idx, cols] + tab.cycles[idx] / np.asarray(f, dtype=float)[idx, cols]
    return lhs <= tab.t_prime + slack


def choice_to_matrix(choice, m: int) -> np.ndarray:
    choice = np.asarray(choice, dtype=int)
    x = np.zeros((choice.shape[0], m + 1))
    x[np.arange(choice.shape[0]), choice] = 1.0
    return x


def matrix_to_choice(x) -> np.ndarray:
    x = np.asarray(x)
    if not (np.all((x == 0) | (x == 1)) and np.all(x.sum(axis=1) == 1)):
        raise ContractError("selection matrix rows must be one-hot")
    return np.argmax(x, axis=1)
