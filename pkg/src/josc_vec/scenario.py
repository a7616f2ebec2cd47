"""Problem instances: road, RSUs, vehicles and radio parameters.

Scenarios are immutable. ``generate`` draws a seeded random instance with
numpy's PCG64 bit generator, which gives the same stream on every platform.
Config files are INI-style (``configparser``) with a single ``[scenario]``
section of flat keys; list values are comma separated. ``save_config`` also
writes an ``[instance]`` section holding the concrete draws so that a loaded
scenario equals the saved one field for field.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import (
    InvariantViolationError,
    MalformedValueError,
    MissingKeyError,
    ScenarioError,
)

BITS_PER_KB = 8192
HZ_PER_GHZ = 1e9
CYCLES_PER_GC = 1e9
KMH_TO_MPS = 1.0 / 3.6

PLACEMENTS = ("midpoint", "uniform")
TRAVEL_PREFIXES = ("inclusive", "exclusive")


@dataclass(frozen=True)
class RadioParams:
    bandwidth_hz: float = 1.25e6
    tx_power_mw: float = 100.0
    noise_mw: float = 1e-10
    pathloss_exponent: float = 4.0
    min_distance_m: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ScenarioError(f"{f.name} must be positive")


@dataclass(frozen=True)
class Rsu:
    id: int
    segment_length_m: float
    capacity_hz: float
    position_m: float
    segment_start_m: float = 0.0

    def __post_init__(self):
        if not self.capacity_hz > 0:
            raise ScenarioError(f"RSU {self.id}: capacity must be positive")
        if not self.segment_length_m > 0:
            raise ScenarioError(f"RSU {self.id}: segment length must be positive")
        end = self.segment_start_m + self.segment_length_m
        if not self.segment_start_m <= self.position_m <= end:
            raise ScenarioError(f"RSU {self.id}: position {self.position_m} outside its segment")


@dataclass(frozen=True)
class Task:
    input_bits: float
    cycles: float
    max_latency_s: float

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ScenarioError(f"task {f.name} must be positive")


@dataclass(frozen=True)
class Vehicle:
    id: int
    task: Task
    local_capacity_hz: float

    def __post_init__(self):
        if not self.local_capacity_hz > 0:
            raise ScenarioError(f"vehicle {self.id}: local capacity must be positive")
        if self.task.cycles / self.local_capacity_hz > self.task.max_latency_s:
            raise ScenarioError(f"vehicle {self.id}: task is not locally feasible")


@dataclass(frozen=True)
class GeneratorParams:
    """Everything a config file can say. Units follow the config keys."""

    road_length_m: float = 100.0
    num_rsus: int = 5
    num_vehicles: int = 40
    speed_kmh: float = 120.0
    capacities_ghz: tuple = (5.0, 10.0, 15.0, 20.0, 25.0)
    bandwidth_hz: float = 1.25e6
    tx_power_mw: float = 100.0
    noise_mw: float = 1e-10
    pathloss_exponent: float = 4.0
    min_distance_m: float = 1.0
    input_kb_range: tuple = (100.0, 300.0)
    cycles_gc_range: tuple = (0.5, 1.5)
    latency_s_range: tuple = (8.0, 10.0)
    local_ghz: float = 1.0
    alpha: float = 1.0
    beta: float = 10.0
    rho: float = 1.5
    seed: int = 1
    placement: str = "midpoint"
    travel_prefix: str = "inclusive"

    def validate(self):
        def bad(key, msg):
            raise InvariantViolationError(key, msg)

        if self.num_vehicles <= 0:
            bad("num_vehicles", "N must be positive")
        if self.num_rsus <= 0:
            bad("num_rsus", "M must be positive")
        if not self.road_length_m > 0:
            bad("road_length_m", "road length must be positive")
        if not self.speed_kmh > 0:
            bad("speed_kmh", "speed must be positive")
        if len(self.capacities_ghz) != self.num_rsus:
            bad("capacities_ghz", f"expected {self.num_rsus} capacities, got {len(self.capacities_ghz)}")
        if any(not c > 0 for c in self.capacities_ghz):
            bad("capacities_ghz", "capacities must be positive")
        for key in ("bandwidth_hz", "tx_power_mw", "noise_mw", "pathloss_exponent",
                    "min_distance_m", "local_ghz", "alpha"):
            if not getattr(self, key) > 0:
                bad(key, f"{key} must be positive")
        for key in ("input_kb_range", "cycles_gc_range", "latency_s_range"):
            rng = getattr(self, key)
            if len(rng) != 2 or not 0 < rng[0] <= rng[1]:
                bad(key, "range must be two positive numbers with low <= high")
        if self.rho < 1:
            bad("rho", "rho must be ≥ 1")
        if self.beta < self.latency_s_range[1]:
            bad("beta", "beta must be ≥ the largest latency deadline")
        if self.placement not in PLACEMENTS:
            bad("placement", f"placement must be one of {PLACEMENTS}")
        if self.travel_prefix not in TRAVEL_PREFIXES:
            bad("travel_prefix", f"travel_prefix must be one of {TRAVEL_PREFIXES}")
        if self.cycles_gc_range[1] / self.local_ghz > self.latency_s_range[0]:
            bad("cycles_gc_range", "largest task must be locally feasible within the smallest deadline")

    def radio(self):
        return RadioParams(self.bandwidth_hz, self.tx_power_mw, self.noise_mw,
                           self.pathloss_exponent, self.min_distance_m)


@dataclass(frozen=True)
class Scenario:
    rsus: tuple
    vehicles: tuple
    speed_mps: float
    radio: RadioParams = RadioParams()
    utility_alpha: float = 1.0
    utility_beta: float = 10.0
    rho: float = 1.5
    travel_prefix: str = "inclusive"
    params: GeneratorParams | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "rsus", tuple(self.rsus))
        object.__setattr__(self, "vehicles", tuple(self.vehicles))
        if not self.rsus:
            raise ScenarioError("M must be positive")
        if not self.vehicles:
            raise ScenarioError("N must be positive")
        if not self.speed_mps > 0:
            raise ScenarioError("speed must be positive")
        if not self.utility_alpha > 0:
            raise ScenarioError("alpha must be positive")
        if self.rho < 1:
            raise ScenarioError("rho must be ≥ 1")
        if self.travel_prefix not in TRAVEL_PREFIXES:
            raise ScenarioError(f"travel_prefix must be one of {TRAVEL_PREFIXES}")
        if self.utility_beta < max(v.task.max_latency_s for v in self.vehicles):
            raise ScenarioError("beta must be ≥ the largest latency deadline")
        start = 0.0
        for j, r in enumerate(self.rsus, start=1):
            if r.id != j:
                raise ScenarioError("RSU ids must be 1..M in order")
            if not math.isclose(r.segment_start_m, start, rel_tol=1e-12, abs_tol=1e-9):
                raise ScenarioError(f"RSU {j}: segments must tile the road from 0")
            start = r.segment_start_m + r.segment_length_m
        for i, v in enumerate(self.vehicles, start=1):
            if v.id != i:
                raise ScenarioError("vehicle ids must be 1..N in order")

    @property
    def num_vehicles(self):
        return len(self.vehicles)

    @property
    def num_rsus(self):
        return len(self.rsus)

    @property
    def road_length_m(self):
        return sum(r.segment_length_m for r in self.rsus)

    def with_params(self, **changes):
        return replace(self, **changes)


def build_rsus(segment_lengths, capacities_hz, positions):
    rsus = []
    start = 0.0
    for j, (length, cap, pos) in enumerate(zip(segment_lengths, capacities_hz, positions), start=1):
        rsus.append(Rsu(j, float(length), float(cap), float(pos), start))
        start += float(length)
    return tuple(rsus)


def generate(seed: int, params: GeneratorParams | None = None) -> Scenario:
    """Draw a random scenario; the result depends only on ``(seed, params)``."""
    params = GeneratorParams() if params is None else params
    params = replace(params, seed=int(seed))
    params.validate()
    rng = np.random.Generator(np.random.PCG64(int(seed)))

    vehicles = []
    for i in range(1, params.num_vehicles + 1):
        d_kb = rng.uniform(*params.input_kb_range)
        c_gc = rng.uniform(*params.cycles_gc_range)
        t_max = rng.uniform(*params.latency_s_range)
        task = Task(d_kb * BITS_PER_KB, c_gc * CYCLES_PER_GC, t_max)
        vehicles.append(Vehicle(i, task, params.local_ghz * HZ_PER_GHZ))

    seg = params.road_length_m / params.num_rsus
    lengths = [seg] * params.num_rsus
    starts = [j * seg for j in range(params.num_rsus)]
    if params.placement == "midpoint":
        positions = [s + seg / 2 for s in starts]
    else:
        positions = [s + rng.uniform(0.0, seg) for s in starts]

    return Scenario(
        rsus=build_rsus(lengths, [c * HZ_PER_GHZ for c in params.capacities_ghz], positions),
        vehicles=tuple(vehicles),
        speed_mps=params.speed_kmh * KMH_TO_MPS,
        radio=params.radio(),
        utility_alpha=params.alpha,
        utility_beta=params.beta,
        rho=params.rho,
        travel_prefix=params.travel_prefix,
        params=params,
    )


def distance(scenario: Scenario, vehicle_anchor_m: float, rsu_id: int) -> float:
    rsu = scenario.rsus[rsu_id - 1]
    return max(scenario.radio.min_distance_m, abs(vehicle_anchor_m - rsu.position_m))


def link_distances(scenario: Scenario) -> np.ndarray:
    """Distance used for link (i, j): the vehicle transmits on entering segment j."""
    return np.array([distance(scenario, r.segment_start_m, r.id) for r in scenario.rsus])


# --- config I/O -----------------------------------------------------------------

_SECTION = "scenario"
_INSTANCE = "instance"
_INT_KEYS = ("num_rsus", "num_vehicles", "seed")
_FLOAT_KEYS = ("road_length_m", "speed_kmh", "bandwidth_hz", "tx_power_mw", "noise_mw",
               "pathloss_exponent", "min_distance_m", "local_ghz", "alpha", "beta", "rho")
_LIST_KEYS = ("capacities_ghz", "input_kb_range", "cycles_gc_range", "latency_s_range")
_STR_KEYS = ("placement", "travel_prefix")
REQUIRED_KEYS = ("road_length_m", "num_rsus", "num_vehicles", "speed_kmh", "capacities_ghz",
                 "bandwidth_hz", "tx_power_mw", "noise_mw", "pathloss_exponent",
                 "min_distance_m", "input_kb_range", "cycles_gc_range", "latency_s_range",
                 "local_ghz", "alpha", "beta", "rho", "seed")
_INSTANCE_KEYS = ("speed_mps", "segment_lengths_m", "rsu_positions_m", "capacities_hz",
                  "input_bits", "cycles", "max_latency_s", "local_capacity_hz")


def _fmt(value):
    if isinstance(value, (list, tuple)):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_float(key, text):
    try:
        value = float(text)
    except ValueError:
        raise MalformedValueError(key, f"malformed number {text!r}") from None
    if not math.isfinite(value):
        raise MalformedValueError(key, f"non-finite number {text!r}")
    return value


def _parse_int(key, text):
    try:
        return int(text)
    except ValueError:
        raise MalformedValueError(key, f"malformed integer {text!r}") from None


def _parse_list(key, text):
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise MalformedValueError(key, "empty list")
    return tuple(_parse_float(key, p) for p in parts)


def params_from_mapping(section) -> GeneratorParams:
    values = {}
    for key in REQUIRED_KEYS:
        if key not in section:
            raise MissingKeyError(key, "missing key")
    for key in _INT_KEYS:
        values[key] = _parse_int(key, section[key])
    for key in _FLOAT_KEYS:
        values[key] = _parse_float(key, section[key])
    for key in _LIST_KEYS:
        values[key] = _parse_list(key, section[key])
    for key in _STR_KEYS:
        if key in section:
            values[key] = section[key].strip()
    params = GeneratorParams(**values)
    params.validate()
    return params


def _read_parser(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    if not parser.has_section(_SECTION):
        raise MissingKeyError(_SECTION, "missing [scenario] section")
    return parser


def load_params(path) -> GeneratorParams:
    return params_from_mapping(_read_parser(path)[_SECTION])


def has_instance(path) -> bool:
    """True if the config file stores an explicit instance next to its parameters."""
    return _read_parser(path).has_section(_INSTANCE)


def load_config(path) -> Scenario:
    parser = _read_parser(path)
    params = params_from_mapping(parser[_SECTION])
    if not parser.has_section(_INSTANCE):
        return generate(params.seed, params)

    inst = parser[_INSTANCE]
    for key in _INSTANCE_KEYS:
        if key not in inst:
            raise MissingKeyError(key, "missing key in [instance]")
    speed = _parse_float("speed_mps", inst["speed_mps"])
    lists = {k: _parse_list(k, inst[k]) for k in _INSTANCE_KEYS if k != "speed_mps"}
    n_rsu = {len(lists[k]) for k in ("segment_lengths_m", "rsu_positions_m", "capacities_hz")}
    n_veh = {len(lists[k]) for k in ("input_bits", "cycles", "max_latency_s", "local_capacity_hz")}
    if len(n_rsu) != 1:
        raise InvariantViolationError("capacities_hz", "RSU lists differ in length")
    if len(n_veh) != 1:
        raise InvariantViolationError("input_bits", "vehicle lists differ in length")
    try:
        rsus = build_rsus(lists["segment_lengths_m"], lists["capacities_hz"], lists["rsu_positions_m"])
        vehicles = tuple(
            Vehicle(i, Task(d, c, t), f)
            for i, (d, c, t, f) in enumerate(zip(lists["input_bits"], lists["cycles"],
                                                 lists["max_latency_s"], lists["local_capacity_hz"]),
                                             start=1)
        )
        return Scenario(rsus, vehicles, speed, params.radio(), params.alpha, params.beta,
                        params.rho, params.travel_prefix, params)
    except InvariantViolationError:
        raise
    except ScenarioError as exc:
        raise InvariantViolationError(_INSTANCE, str(exc)) from None


def params_of(scenario: Scenario) -> GeneratorParams:
    """Generator parameters describing ``scenario`` (stored ones if it was generated)."""
    if scenario.params is not None:
        base = scenario.params
    else:
        v = scenario.vehicles
        base = GeneratorParams(
            road_length_m=scenario.road_length_m,
            num_rsus=scenario.num_rsus,
            num_vehicles=scenario.num_vehicles,
            speed_kmh=scenario.speed_mps * 3.6,
            capacities_ghz=tuple(r.capacity_hz / HZ_PER_GHZ for r in scenario.rsus),
            input_kb_range=(min(x.task.input_bits for x in v) / BITS_PER_KB,
                            max(x.task.input_bits for x in v) / BITS_PER_KB),
            cycles_gc_range=(min(x.task.cycles for x in v) / CYCLES_PER_GC,
                             max(x.task.cycles for x in v) / CYCLES_PER_GC),
            latency_s_range=(min(x.task.max_latency_s for x in v),
                             max(x.task.max_latency_s for x in v)),
            local_ghz=min(x.local_capacity_hz for x in v) / HZ_PER_GHZ,
        )
    r = scenario.radio
    return replace(base, bandwidth_hz=r.bandwidth_hz, tx_power_mw=r.tx_power_mw,
                   noise_mw=r.noise_mw, pathloss_exponent=r.pathloss_exponent,
                   min_distance_m=r.min_distance_m, alpha=scenario.utility_alpha,
                   beta=scenario.utility_beta, rho=scenario.rho,
                   travel_prefix=scenario.travel_prefix)


def params_to_parser(params: GeneratorParams) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    parser[_SECTION] = {f.name: _fmt(getattr(params, f.name)) for f in fields(params)}
    return parser


def save_params(params: GeneratorParams, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        params_to_parser(params).write(fh)


def save_config(scenario: Scenario, path):
    parser = params_to_parser(params_of(scenario))
    parser[_INSTANCE] = {
        "speed_mps": _fmt(float(scenario.speed_mps)),
        "segment_lengths_m": _fmt([r.segment_length_m for r in scenario.rsus]),
        "rsu_positions_m": _fmt([r.position_m for r in scenario.rsus]),
        "capacities_hz": _fmt([r.capacity_hz for r in scenario.rsus]),
        "input_bits": _fmt([v.task.input_bits for v in scenario.vehicles]),
        "cycles": _fmt([v.task.cycles for v in scenario.vehicles]),
        "max_latency_s": _fmt([v.task.max_latency_s for v in scenario.vehicles]),
        "local_capacity_hz": _fmt([v.local_capacity_hz for v in scenario.vehicles]),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        parser.write(fh)


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package (``default`` or ``paper_literal``)."""
    return Path(str(resources.files("josc_vec") / "configs" / f"{name}.cfg"))
