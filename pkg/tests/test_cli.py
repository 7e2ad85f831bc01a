import csv
import io
import json
import subprocess
import sys

import pytest

from uavnoma.cli import main


def test_solve_oma_json(capsys):
    assert main(["solve", "--scheme", "oma"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["scheme"] == "oma" and doc["status"] == "converged"
    assert doc["scenario"]["system.m_total"] == 100


def test_solve_writes_outputs(tmp_path, capsys):
    assert main(["solve", "--scheme", "fixed-power", "--out-dir", str(tmp_path), "--format", "csv"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("scheme,status,outer_iterations,log10_objective\r\n")
    assert (tmp_path / "report.json").exists()
    traces = sorted(p.name for p in tmp_path.glob("trace_*.csv"))
    assert "trace_blocklength_01.csv" in traces
    assert any(n.startswith("trace_location_") for n in traces)


def test_zero_energy_exits_2(capsys):
    assert main(["solve", "--set", "system.e_tot=0"]) == 2
    assert json.loads(capsys.readouterr().out)["status"] == "infeasible"


def test_bad_scenario_exits_2(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[system]\np_max = -1\n")
    assert main(["solve", "--scenario", str(bad)]) == 2
    assert main(["solve", "--set", "system.nope=1"]) == 2


def test_missing_scenario_file_exits_2(tmp_path):
    assert main(["solve", "--scenario", str(tmp_path / "none.toml")]) == 2


def test_lattice_dump(tmp_path, capsys):
    assert main(["lattice-dump"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0][:2] == ["m_prime", "m3"]
    assert len(rows) > 1
    assert main(["lattice-dump", "--full", "--out-dir", str(tmp_path)]) == 0
    full = list(csv.reader(io.StringIO((tmp_path / "lattice.csv").read_text())))
    assert len(full) == 1 + 99 * 100 // 2
    assert main(["lattice-dump", "--powers", "1,2"]) == 2


def test_sweep_files_are_deterministic(tmp_path):
    args = ["sweep", "--variable", "e_tot", "--values", "5,10", "--scheme", "oma", "--repetitions", "2", "--seed", "3"]
    for d in ("a", "b"):
        assert main(args + ["--out-dir", str(tmp_path / d), "--format", "svg-lines"]) == 0
    a, b = (tmp_path / d / "sweep.csv" for d in ("a", "b"))
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a" / "sweep.svg").exists()
    assert (tmp_path / "a" / "sweep_timing.csv").exists()


def test_sweep_rejects_unsorted_values():
    assert main(["sweep", "--values", "120,100", "--scheme", "oma"]) == 2


def test_converge_to_stdout(capsys):
    assert main(["converge", "--values", "80", "--max-iter", "1"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["iteration", "objective_h80", "log10_objective_h80"]
    assert len(rows) == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "uavnoma", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("solve", "sweep", "converge", "lattice-dump"):
        assert cmd in r.stdout


def test_unknown_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
