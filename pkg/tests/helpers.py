"""Small hand-built scenarios shared by the tests."""

from josc_vec.scenario import RadioParams, Scenario, Task, Vehicle, build_rsus

KB = 8192
GHZ = 1e9


def make_scenario(tasks, capacities_ghz, segment_m=20.0, speed_mps=100 / 3, local_ghz=1.0,
                  bandwidth_hz=1.25e6, beta=10.0, rho=1.5, prefix="inclusive"):
    """``tasks`` is a list of (input_kb, gigacycles, deadline_s)."""
    m = len(capacities_ghz)
    rsus = build_rsus([segment_m] * m, [c * GHZ for c in capacities_ghz],
                      [segment_m * (j + 0.5) for j in range(m)])
    vehicles = tuple(Vehicle(i, Task(d * KB, c * GHZ, t), local_ghz * GHZ)
                     for i, (d, c, t) in enumerate(tasks, start=1))
    return Scenario(rsus, vehicles, speed_mps, RadioParams(bandwidth_hz=bandwidth_hz),
                    1.0, beta, rho, prefix)
