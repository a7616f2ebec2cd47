import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from josc_vec.errors import InvariantViolationError, MalformedValueError, MissingKeyError, ScenarioError
from josc_vec.scenario import (GeneratorParams, RadioParams, Task, Vehicle, bundled_config, distance,
                               generate, link_distances, load_config, load_params, save_config,
                               save_params)


def test_default_generation_matches_simulation_setup():
    scn = generate(1)
    assert [r.capacity_hz for r in scn.rsus] == [5e9, 10e9, 15e9, 20e9, 25e9]
    assert scn.num_vehicles == 40
    assert scn.speed_mps == pytest.approx(33.3333333333, rel=1e-10)
    assert [r.segment_length_m for r in scn.rsus] == [20.0] * 5
    assert [r.position_m for r in scn.rsus] == [10.0, 30.0, 50.0, 70.0, 90.0]
    for v in scn.vehicles:
        assert 100 * 8192 <= v.task.input_bits <= 300 * 8192
        assert 0.5e9 <= v.task.cycles <= 1.5e9
        assert 8.0 <= v.task.max_latency_s <= 10.0
        assert v.local_capacity_hz == 1e9


def test_generation_is_deterministic():
    assert generate(1) == generate(1)
    assert generate(1) != generate(2)


def test_draw_order_is_per_vehicle():
    # first vehicle consumes the first three uniforms: d, c, T
    rng = np.random.Generator(np.random.PCG64(7))
    d, c, t = rng.uniform(100, 300), rng.uniform(0.5, 1.5), rng.uniform(8, 10)
    task = generate(7).vehicles[0].task
    assert task.input_bits == d * 8192
    assert task.cycles == c * 1e9
    assert task.max_latency_s == t


def test_zero_vehicles_rejected():
    with pytest.raises(InvariantViolationError, match="N must be positive") as exc:
        generate(1, replace(GeneratorParams(), num_vehicles=0))
    assert exc.value.key == "num_vehicles"


@pytest.mark.parametrize("changes, key", [
    ({"num_rsus": 0}, "num_rsus"),
    ({"capacities_ghz": (5.0, 10.0)}, "capacities_ghz"),
    ({"bandwidth_hz": 0.0}, "bandwidth_hz"),
    ({"input_kb_range": (300.0, 100.0)}, "input_kb_range"),
    ({"rho": 0.5}, "rho"),
    ({"beta": 5.0}, "beta"),
    ({"placement": "random"}, "placement"),
])
def test_invalid_params_name_the_key(changes, key):
    with pytest.raises(InvariantViolationError) as exc:
        generate(1, replace(GeneratorParams(), **changes))
    assert exc.value.key == key


def test_segments_tile_road_and_positions_increase():
    for placement in ("midpoint", "uniform"):
        scn = generate(3, replace(GeneratorParams(), placement=placement))
        assert math.isclose(scn.road_length_m, 100.0)
        pos = [r.position_m for r in scn.rsus]
        assert all(a < b for a, b in zip(pos, pos[1:]))
        for r in scn.rsus:
            assert r.segment_start_m <= r.position_m <= r.segment_start_m + r.segment_length_m


def test_distance_examples():
    scn = generate(1)
    assert distance(scn, 20.0, 2) == 10.0       # entry of segment 2, RSU at 30 m
    assert distance(scn, 30.0, 2) == 1.0        # clamp floor
    assert distance(scn, 0.0, 5) == 90.0
    assert list(link_distances(scn)) == [10.0] * 5


def test_domain_types_reject_nonpositive_values():
    with pytest.raises(ScenarioError):
        RadioParams(bandwidth_hz=0.0)
    with pytest.raises(ScenarioError):
        Task(0.0, 1e9, 8.0)
    with pytest.raises(ScenarioError):
        Vehicle(1, Task(1.0, 1e9, 8.0), 0.0)
    with pytest.raises(ScenarioError):
        Vehicle(1, Task(1.0, 9e9, 8.0), 1e9)   # not locally feasible


def test_config_round_trip(tmp_path):
    scn = generate(4)
    path = tmp_path / "s.cfg"
    save_config(scn, path)
    assert load_config(path) == scn
    uniform = generate(4, replace(GeneratorParams(), placement="uniform", num_vehicles=7))
    save_config(uniform, path)
    assert load_config(path) == uniform


def test_params_only_config_regenerates(tmp_path):
    path = tmp_path / "p.cfg"
    params = replace(GeneratorParams(), seed=9, num_vehicles=12)
    save_params(params, path)
    assert load_params(path) == params
    assert load_config(path) == generate(9, params)


def test_config_rho_below_one(tmp_path):
    path = tmp_path / "bad.cfg"
    text = bundled_config("default").read_text().replace("rho = 1.5", "rho = 0.5")
    path.write_text(text)
    with pytest.raises(InvariantViolationError, match="rho must be ≥ 1") as exc:
        load_config(path)
    assert exc.value.key == "rho"


def test_config_errors_are_distinct(tmp_path):
    base = bundled_config("default").read_text()
    missing = tmp_path / "missing.cfg"
    missing.write_text(base.replace("noise_mw = 1e-10\n", ""))
    with pytest.raises(MissingKeyError) as exc:
        load_config(missing)
    assert exc.value.key == "noise_mw"
    malformed = tmp_path / "malformed.cfg"
    malformed.write_text(base.replace("alpha = 1.0", "alpha = one"))
    with pytest.raises(MalformedValueError) as exc:
        load_config(malformed)
    assert exc.value.key == "alpha"


def test_bundled_narrow_band_config():
    scn = load_config(bundled_config("paper_literal"))
    assert scn.radio.bandwidth_hz == 1250.0
    assert load_config(bundled_config("default")).radio.bandwidth_hz == 1.25e6


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 60), m=st.integers(1, 6))
def test_generated_vehicles_are_locally_feasible(seed, n, m):
    params = replace(GeneratorParams(), num_vehicles=n, num_rsus=m, capacities_ghz=(5.0,) * m)
    scn = generate(seed, params)
    for v in scn.vehicles:
        assert v.task.cycles / v.local_capacity_hz <= v.task.max_latency_s
    assert math.isclose(sum(r.segment_length_m for r in scn.rsus), params.road_length_m)
