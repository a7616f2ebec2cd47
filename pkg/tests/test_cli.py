import csv

import pytest

from josc_vec.cli import UsageError, main, parse_seeds, parse_sweep
from josc_vec.scenario import generate, load_config, load_params, bundled_config


def test_parse_seeds():
    assert parse_seeds("1..20") == tuple(range(1, 21))
    assert parse_seeds("3,5,8") == (3, 5, 8)
    assert parse_seeds("7") == (7,)
    for bad in ("5..1", "a..b", "", "-1"):
        with pytest.raises(UsageError):
            parse_seeds(bad)


def test_parse_sweep():
    assert parse_sweep("num_vehicles=10:70:10") == ("num_vehicles", (10, 20, 30, 40, 50, 60, 70))
    assert parse_sweep("rho=1:2:0.5") == ("rho", (1.0, 1.5, 2.0))
    assert parse_sweep("bandwidth_hz=1e6,2e6") == ("bandwidth_hz", (1e6, 2e6))
    for bad in ("num_vehicles", "speed=1:2:1", "num_vehicles=10:5:1", "num_vehicles=1:2", "rho=a,b"):
        with pytest.raises(UsageError):
            parse_sweep(bad)


def test_run_writes_rows(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("JOSC_THREADS", "2")
    code = main(["run", "--algos", "josc,gs,ra", "--sweep", "num_vehicles=4:8:2", "--seeds", "1..2",
                 "--out", str(tmp_path), "--no-timing"])
    assert code == 0
    with open(tmp_path / "results.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3 * 3 * 2
    assert all(r["wall_ms"] == "0.0" for r in rows)
    assert "wrote 18 rows" in capsys.readouterr().out


def test_run_is_byte_deterministic(tmp_path, monkeypatch):
    args = ["run", "--algos", "josc,gs", "--sweep", "num_vehicles=5,7", "--seeds", "3", "--no-timing"]
    monkeypatch.setenv("JOSC_THREADS", "1")
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("JOSC_THREADS", "2")
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("results.csv", "convergence_3.csv", "load_3.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_gen_round_trip(tmp_path):
    out = tmp_path / "scenario.cfg"
    assert main(["gen", "--seed", "9", "--out", str(out)]) == 0
    assert load_config(out) == generate(9, load_params(bundled_config("default")))
    assert main(["run", "--config", str(out), "--algos", "gs", "--out", str(tmp_path / "r")]) == 0


def test_oracle_refusal_exit_code(tmp_path):
    assert main(["run", "--algos", "oracle", "--seeds", "1", "--out", str(tmp_path)]) == 3


@pytest.mark.parametrize("argv", [
    [],
    ["fly"],
    ["run", "--algos", "best", "--out", "x"],
    ["run", "--sweep", "speed=1:2:1", "--out", "x"],
    ["run", "--seeds", "9..1", "--out", "x"],
    ["run", "--config", "/no/such/file.cfg", "--out", "x"],
    ["verify", "--suite", "extra"],
    ["gen", "--out", "x.cfg"],
])
def test_usage_errors(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_bad_thread_env_is_usage_error(tmp_path, monkeypatch):
    monkeypatch.setenv("JOSC_THREADS", "many")
    assert main(["run", "--algos", "gs", "--out", str(tmp_path)]) == 2


def test_malformed_config_is_usage_error(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[scenario]\nnum_vehicles = lots\n")
    assert main(["run", "--config", str(bad), "--algos", "gs", "--out", str(tmp_path / "o")]) == 2
