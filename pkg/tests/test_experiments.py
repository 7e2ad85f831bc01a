import csv
import io
import math
import xml.etree.ElementTree as ET

import pytest

from uavnoma import experiments
from uavnoma.errors import InvalidInput
from uavnoma.experiments import ResultTable, SweepSpec, emit_plot_data, run_convergence, run_sweep

SVG = "{http://www.w3.org/2000/svg}"


@pytest.fixture(scope="module")
def oma_sweep(scenario):
    spec = SweepSpec("m_total", (80, 100, 120), ("oma",), repetitions=2, seed=5)
    return run_sweep(spec, scenario)


def test_sweep_cardinality_and_order(oma_sweep):
    t = oma_sweep
    assert len(t) == 3 * 1 * 2
    assert t.columns == experiments.SWEEP_COLUMNS
    assert t.column("value") == [80, 80, 100, 100, 120, 120]
    assert t.column("repetition") == [0, 1] * 3
    assert t.column("link_seed") == [5, 6] * 3
    assert len(t.wall_time) == len(t)


def test_sweep_is_deterministic(oma_sweep, scenario):
    again = run_sweep(SweepSpec("m_total", (80, 100, 120), ("oma",), repetitions=2, seed=5), scenario)
    assert again.to_csv() == oma_sweep.to_csv()


def test_parallel_sweep_matches_serial(oma_sweep, scenario):
    par = run_sweep(SweepSpec("m_total", (80, 100, 120), ("oma",), repetitions=2, seed=5), scenario, workers=2)
    assert par.to_csv() == oma_sweep.to_csv()


def test_where_filters_rows(oma_sweep):
    sub = oma_sweep.where(value=100)
    assert len(sub) == 2 and set(sub.column("value")) == {100}
    assert len(oma_sweep.where(value=100, repetition=1)) == 1


def test_csv_excludes_wall_time_unless_asked(oma_sweep):
    rows = list(csv.reader(io.StringIO(oma_sweep.to_csv())))
    assert "wall_time_s" not in rows[0]
    rows_t = list(csv.reader(io.StringIO(oma_sweep.to_csv(include_time=True))))
    assert rows_t[0][-1] == "wall_time_s"


def test_four_rows_give_five_lines(tmp_path):
    t = ResultTable(("x", "log10_objective"), [(k, -float(k)) for k in range(4)], [0.0] * 4)
    p = emit_plot_data(t, "csv", tmp_path / "t.csv")
    assert p.read_bytes().count(b"\r\n") == 5


def test_empty_table_is_rejected(tmp_path):
    with pytest.raises(InvalidInput):
        emit_plot_data(ResultTable(("x",)), "csv", tmp_path / "e.csv")


def test_unknown_format_is_rejected(tmp_path):
    t = ResultTable(("x", "log10_objective"), [(1, -2.0)], [0.0])
    with pytest.raises(InvalidInput):
        emit_plot_data(t, "png", tmp_path / "t.png")


def test_unwritable_path_raises_oserror(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    t = ResultTable(("x", "log10_objective"), [(1, -2.0)], [0.0])
    with pytest.raises(OSError):
        emit_plot_data(t, "csv", blocker / "sub" / "t.csv")


def test_svg_parses_with_finite_coordinates(oma_sweep, tmp_path):
    p = emit_plot_data(oma_sweep, "svg-lines", tmp_path / "s.svg", x="value", y="log10_objective", series="scheme")
    root = ET.parse(p).getroot()
    lines = root.findall(f"{SVG}polyline")
    assert len(lines) == 1
    for pl in lines:
        pts = [tuple(map(float, c.split(","))) for c in pl.get("points").split()]
        assert len(pts) == len(oma_sweep)
        assert all(math.isfinite(a) and math.isfinite(b) for a, b in pts)


def test_svg_of_tiny_probabilities(tmp_path):
    # plain probability columns go through log10 even below the double range
    from uavnoma import fbl

    t = ResultTable(("iteration", "objective_h80"), [(1, fbl.from_log(-2000.0)), (2, fbl.from_log(-2100.0))], [0.0, 0.0])
    root = ET.parse(emit_plot_data(t, "svg-lines", tmp_path / "p.svg")).getroot()
    pts = root.find(f"{SVG}polyline").get("points").split()
    assert len(pts) == 2


def test_sweep_spec_validation():
    with pytest.raises(InvalidInput):
        SweepSpec("noise", (1,))
    with pytest.raises(InvalidInput):
        SweepSpec("m_total", ())
    with pytest.raises(InvalidInput):
        SweepSpec("m_total", (120, 100))
    with pytest.raises(InvalidInput):
        SweepSpec("m_total", (100,), ("tdma",))
    with pytest.raises(InvalidInput):
        SweepSpec("m_total", (100,), repetitions=2)


def test_scenario_at(scenario):
    sc = experiments.scenario_at(scenario, "uav_height", 100.0)
    assert sc.params.uav_height == 100.0 and sc.geometry.uav[2] == 100.0
    assert experiments.scenario_at(scenario, "m_total", 120.0).params.m_total == 120
    with pytest.raises(InvalidInput):
        experiments.scenario_at(scenario, "m_total", 100.5)


def test_convergence_with_budget_one(scenario):
    t = run_convergence(scenario, [80.0], outer_max_iter=1)
    assert len(t) == 1
    assert t.columns == ("iteration", "objective_h80", "log10_objective_h80")
    assert t.rows[0][0] == 1


def test_convergence_rejects_empty_heights(scenario):
    with pytest.raises(InvalidInput):
        run_convergence(scenario, [])
