"""Seeded experiment runner: sweeps, CSV output and a small SVG chart.

Every (seed, sweep value) pair is an independent job. Jobs may run in worker
processes (``JOSC_THREADS`` caps how many), and rows are always written in
(seed, algo, sweep value) order, so the CSV files do not depend on scheduling.
"""

from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import OracleLimitError
from .scenario import GeneratorParams, Scenario, generate
from .solvers import ALGORITHMS, OracleLimits, oracle, solve

SWEEP_VARIABLES = {"num_vehicles": int, "bandwidth_hz": float, "rho": float}
RESULT_COLUMNS = ("seed", "algo", "sweep_value", "system_utility", "per_server_counts",
                  "outer_iters", "inner_iters_total", "wall_ms", "feasible")


def worker_count(default: int | None = None) -> int:
    """Worker processes allowed: ``JOSC_THREADS`` if set, else the CPU count."""
    env = os.environ.get("JOSC_THREADS", "").strip()
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ValueError(f"JOSC_THREADS must be a positive integer, got {env!r}") from None
        if value < 1:
            raise ValueError(f"JOSC_THREADS must be a positive integer, got {env!r}")
        return value
    return default if default is not None else (os.cpu_count() or 1)


def parallel_imap(fn, items, workers: int = 1):
    """Yield ``fn(item)`` in input order, computed in worker processes when ``workers > 1``."""
    if workers <= 1 or len(items) <= 1:
        for item in items:
            yield fn(item)
        return
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        yield from pool.map(fn, items)


def parallel_map(fn, items, workers: int = 1):
    return list(parallel_imap(fn, items, workers))


@dataclass
class ExperimentSpec:
    params: GeneratorParams
    algorithms: tuple = ("josc", "gs", "ra")
    sweep_variable: str | None = None
    sweep_values: tuple = ()
    seeds: tuple = (1,)
    output_dir: Path = Path("results")
    timing: bool = True
    scenario: Scenario | None = None    # explicit instance; used instead of generating per seed

    def validate(self):
        if not self.algorithms:
            raise ValueError("at least one algorithm is required")
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            raise ValueError(f"unknown algorithms {unknown}; expected a subset of {ALGORITHMS}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.scenario is not None and (self.sweep_variable is not None or len(self.seeds) != 1):
            raise ValueError("an explicit instance cannot be combined with a sweep or several seeds")
        if self.sweep_variable is not None:
            if self.sweep_variable not in SWEEP_VARIABLES:
                raise ValueError(f"cannot sweep {self.sweep_variable!r}; "
                                 f"expected one of {tuple(SWEEP_VARIABLES)}")
            if not self.sweep_values:
                raise ValueError("sweep needs at least one value")
            for value in self.sweep_values:
                self.params_at(value).validate()
        else:
            self.params.validate()

    def points(self):
        if self.sweep_variable is None:
            return [None]
        return list(self.sweep_values)

    def params_at(self, value) -> GeneratorParams:
        if self.sweep_variable is None:
            return self.params
        return replace(self.params, **{self.sweep_variable: value})


@dataclass
class ResultRow:
    seed: int
    algo: str
    sweep_value: object
    system_utility: float
    per_server_counts: tuple
    outer_iters: int
    inner_iters_total: int
    wall_ms: float
    feasible: bool


@dataclass
class RunOutcome:
    rows: list
    convergence: dict = field(default_factory=dict)  # seed -> rows of the inner-loop traces
    load: dict = field(default_factory=dict)         # seed -> rows of per-server counts
    refused: str | None = None


# --- value formatting ----------------------------------------------------------------

def fmt(value) -> str:
    """Locale-free text for CSV cells; floats use the shortest round-trip form."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (tuple, list)):
        return ";".join(fmt(v) for v in value)
    if value is None:
        return ""
    return str(value)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def _write(path: Path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# --- one job ----------------------------------------------------------------------------

def _job(args):
    spec, seed, value = args
    scn = spec.scenario if spec.scenario is not None else generate(seed, spec.params_at(value))
    rows, conv, load = [], [], []
    for algo in spec.algorithms:
        t = time.perf_counter()
        try:
            sol = oracle(scn, OracleLimits()) if algo == "oracle" else solve(algo, scn)
        except OracleLimitError as exc:
            return rows, conv, load, str(exc)
        wall = (time.perf_counter() - t) * 1000.0 if spec.timing else 0.0
        counts = tuple(int(c) for c in sol.server_counts())
        outer = len(sol.outer_trace)
        rows.append(ResultRow(seed, algo, value, sol.system_utility, counts, outer,
                              int(sol.inner_iters), wall, bool(sol.feasible)))
        load.append([value, algo, *counts, int(np.count_nonzero(sol.choice == 0))])
        if algo == "josc":
            blank = [""] * (2 + scn.num_rsus)
            for k, (res, step) in enumerate(zip(sol.allocations, sol.outer_trace), start=1):
                # inner_iter 0 opens each outer block and carries that iterate's utility
                conv.append([value, k, 0, "", step.utility, "", *blank])
                for rec in res.trace:
                    conv.append([value, k, rec.t, rec.max_change, rec.utility, rec.best_utility,
                                 rec.violation, rec.mean_f_hz, *rec.psi])
    return rows, conv, load, None


def run(spec: ExperimentSpec, workers: int = 1) -> RunOutcome:
    """Run every (seed, sweep value) job and write the CSV files and chart.

    Rows finished before a refusal or error are still written.
    """
    spec.validate()
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(spec, seed, value) for seed in spec.seeds for value in spec.points()]
    outcome = RunOutcome(rows=[])
    try:
        results = parallel_imap(_job, jobs, workers)
        for (_, seed, _), (rows, conv, load, refused) in zip(jobs, results):
            outcome.rows.extend(rows)
            outcome.convergence.setdefault(seed, []).extend(conv)
            outcome.load.setdefault(seed, []).extend(load)
            if refused and outcome.refused is None:
                outcome.refused = refused
    finally:
        write_outputs(spec, outcome)
    return outcome


def _sort_key(spec: ExperimentSpec):
    order = {a: k for k, a in enumerate(spec.algorithms)}
    points = {fmt(v): k for k, v in enumerate(spec.points())}
    return lambda r: (r.seed, order[r.algo], points[fmt(r.sweep_value)])


def write_outputs(spec: ExperimentSpec, outcome: RunOutcome):
    out = Path(spec.output_dir)
    rows = sorted(outcome.rows, key=_sort_key(spec))
    _write(out / "results.csv", _csv_text(RESULT_COLUMNS, (
        [r.seed, r.algo, r.sweep_value, r.system_utility, r.per_server_counts, r.outer_iters,
         r.inner_iters_total, r.wall_ms, r.feasible] for r in rows)))
    m = spec.scenario.num_rsus if spec.scenario is not None else len(spec.params.capacities_ghz)
    for seed, conv in sorted(outcome.convergence.items()):
        if "josc" in spec.algorithms:
            header = ["sweep_value", "outer_iter", "inner_iter", "max_change", "utility",
                      "best_utility", "violation", "mean_f_hz"] + [f"psi_{j}" for j in range(1, m + 1)]
            _write(out / f"convergence_{seed}.csv", _csv_text(header, conv))
    for seed, load in sorted(outcome.load.items()):
        header = ["sweep_value", "algo"] + [f"rsu_{j}" for j in range(1, m + 1)] + ["local"]
        _write(out / f"load_{seed}.csv", _csv_text(header, load))
    summary = summarize(spec, rows)
    _write(out / "summary.csv", _csv_text(("algo", "sweep_value", "mean_utility", "runs"), summary))
    if summary:
        _write(out / "utility.svg", line_chart(spec, summary))


def summarize(spec: ExperimentSpec, rows) -> list:
    """Mean system utility per (algo, sweep value), in spec order."""
    out = []
    for algo in spec.algorithms:
        for value in spec.points():
            us = [r.system_utility for r in rows if r.algo == algo and fmt(r.sweep_value) == fmt(value)]
            if us:
                out.append([algo, value, math.fsum(us) / len(us), len(us)])
    return out


# --- chart --------------------------------------------------------------------------------

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def line_chart(spec: ExperimentSpec, summary, width=640, height=400) -> str:
    """Mean utility against the sweep value, one polyline per algorithm."""
    pad = 60
    xs_all = list(range(len(spec.points())))
    ys = [row[2] for row in summary]
    lo, hi = min(ys), max(ys)
    if hi - lo < 1e-12:
        lo, hi = lo - 1.0, hi + 1.0

    def px(k):
        span = max(1, len(xs_all) - 1)
        return pad + (width - 2 * pad) * k / span

    def py(y):
        return height - pad - (height - 2 * pad) * (y - lo) / (hi - lo)

    label = spec.sweep_variable or "run"
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'font-family="sans-serif" font-size="12">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
             f'<text x="{width / 2}" y="{height - 15}" text-anchor="middle">{label}</text>',
             f'<text x="15" y="{height / 2}" transform="rotate(-90 15 {height / 2})" '
             f'text-anchor="middle">mean system utility</text>']
    for k, value in enumerate(spec.points()):
        parts.append(f'<text x="{px(k):.1f}" y="{height - pad + 18}" text-anchor="middle">{fmt(value)}</text>')
    for y in (lo, (lo + hi) / 2, hi):
        parts.append(f'<text x="{pad - 6}" y="{py(y):.1f}" text-anchor="end">{y:.2f}</text>')
    for a, algo in enumerate(spec.algorithms):
        pts = [(px(k), py(row[2])) for k, value in enumerate(spec.points())
               for row in summary if row[0] == algo and fmt(row[1]) == fmt(value)]
        if not pts:
            continue
        color = _COLORS[a % len(_COLORS)]
        coords = " ".join(f"{x:.1f},{y:.1f}" for x, y in pts)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        parts.extend(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3" fill="{color}"/>' for x, y in pts)
        parts.append(f'<text x="{width - pad + 5}" y="{pad + 16 * a}" fill="{color}">{algo}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
