import json

import numpy as np
import pytest

from uavnoma import ao
from uavnoma.ao import Allocation, AoStatus
from uavnoma.config import SystemParams
from uavnoma.dep import BlocklengthPair, full_breakdown
from uavnoma.errors import Infeasible
from uavnoma.link import PowerTriple


def test_initializer_is_feasible(scenario):
    sc = scenario
    a = ao.initialize(sc.params, sc.geometry, sc.link)
    assert ao.check_feasibility(a, sc.params, sc.geometry, sc.link) == []
    assert a.q[0] == pytest.approx(75.0) and a.q[1] == pytest.approx(75.0)
    assert a.q[2] == sc.params.uav_height


def test_zero_energy_names_the_energy_check(scenario):
    sc = scenario
    p = SystemParams(**{**sc.params.__dict__, "e_tot": 0.0})
    with pytest.raises(Infeasible) as exc:
        ao.initialize(p, sc.geometry, sc.link)
    assert "energy" in str(exc.value)
    rep = ao.solve(p, sc.geometry, sc.link)
    assert rep.status is AoStatus.INFEASIBLE and rep.allocation is None


def test_collapsed_box_pins_the_uav(scenario):
    sc = scenario
    p = SystemParams(**{**sc.params.__dict__, "x_min": 60.0, "x_max": 60.0, "y_min": 90.0, "y_max": 90.0})
    rep = ao.solve(p, sc.geometry, sc.link, outer_max_iter=3, settings=sc.solver)
    assert rep.status is not AoStatus.INFEASIBLE
    assert tuple(rep.allocation.q[:2]) == (60.0, 90.0)


def test_check_feasibility_zero_powers(scenario):
    sc = scenario
    a = Allocation(PowerTriple(0.0, 0.0, 0.0), BlocklengthPair(50, 50), np.array([75.0, 75.0, 80.0]))
    bad = ao.check_feasibility(a, sc.params, sc.geometry, sc.link)
    assert [v.constraint for v in bad] == ["reliability"]


def test_check_feasibility_box(scenario, default_report):
    sc = scenario
    a = default_report.allocation
    out = a.with_(q=np.array([sc.params.x_max + 1, a.q[1], a.q[2]]))
    bad = ao.check_feasibility(out, sc.params, sc.geometry, sc.link)
    assert [v.constraint for v in bad].count("box") == 1
    assert [v for v in bad if v.constraint == "box"][0].amount == pytest.approx(1.0)


def test_default_run_converges(default_report, scenario):
    rep = default_report
    assert rep.status in (AoStatus.CONVERGED, AoStatus.STALLED)
    assert rep.outer_iterations <= 15
    assert rep.is_monotone()
    assert ao.check_feasibility(rep.allocation, scenario.params, scenario.geometry, scenario.link) == []
    # one check after initialisation plus one per stage per cycle
    assert rep.feasibility_checks == 1 + 3 * rep.outer_iterations
    assert len(rep.log10_history) == rep.outer_iterations + 1
    a = rep.allocation
    link = ao.allocation_link(a, scenario.geometry, scenario.params, scenario.link)
    assert rep.breakdown.log_obj == pytest.approx(full_breakdown(link, a.pw, a.m, scenario.params).log_obj, rel=1e-12)
    assert rep.log10_history[-1] == pytest.approx(rep.breakdown.log10_obj, rel=1e-12)


def test_default_improves_on_initializer(default_report):
    h = default_report.log10_history
    assert h[-1] < h[0]


def test_restart_at_fixed_point_takes_one_cycle(default_report, scenario):
    sc = scenario
    rep = ao.solve(sc.params, sc.geometry, sc.link, settings=sc.solver, start=default_report.allocation)
    assert rep.outer_iterations == 1
    assert rep.log10_history[-1] <= default_report.log10_history[-1] + 1e-9


def test_report_json(default_report):
    d = json.loads(default_report.to_json())
    assert d["scheme"] == "joint"
    assert d["status"] == default_report.status.value
    assert set(d["allocation"]) == {"p1", "p2", "pu", "m_prime", "m3", "qx", "qy", "qz"}
    assert d["outer_iterations"] == default_report.outer_iterations
    assert len(d["log10_history"]) == len(default_report.log10_history)


def test_stage_traces_recorded(default_report):
    t = default_report.stage_traces
    assert set(t) == {"power", "blocklength", "location"}
    assert len(t["blocklength"]) == default_report.outer_iterations
    for tr in t["power"] + t["location"]:
        assert tr.is_monotone()


def test_disabled_stages_are_identity(scenario):
    sc = scenario
    a = ao.initialize(sc.params, sc.geometry, sc.link)
    rep = ao.solve(
        sc.params, sc.geometry, sc.link, settings=sc.solver,
        optimize_power=False, optimize_blocklength=False, optimize_location=False,
    )
    assert rep.allocation.pw == a.pw and rep.allocation.m == a.m
    assert np.array_equal(rep.allocation.q, a.q)
    assert rep.outer_iterations == 1
