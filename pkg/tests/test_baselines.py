import math

import numpy as np
import pytest

from oracles import log_dep_ref
from uavnoma import baselines, fbl
from uavnoma.ao import AoStatus
from uavnoma.config import SystemParams
from uavnoma.errors import InvalidInput


@pytest.fixture(scope="module")
def fixed_location(scenario, default_report):
    sc = scenario
    return baselines.solve_fixed_location(sc.params, sc.geometry, sc.link, settings=sc.solver)


@pytest.fixture(scope="module")
def fixed_power(scenario):
    sc = scenario
    return baselines.solve_fixed_power(sc.params, sc.geometry, sc.link, settings=sc.solver)


def test_fixed_location_holds_the_uav(fixed_location, scenario):
    q = fixed_location.allocation.q
    assert tuple(q[:2]) == (75.0, 75.0)
    assert fixed_location.scheme == "fixed-location"
    assert fixed_location.stage_traces["location"] == []


def test_fixed_location_at_joint_position_matches_joint(scenario, default_report):
    sc = scenario
    rep = baselines.solve_fixed_location(sc.params, sc.geometry, sc.link, fixed_q=default_report.allocation.q, settings=sc.solver)
    assert rep.log10_objective == pytest.approx(default_report.log10_objective, rel=1e-6)


def test_fixed_power_holds_the_powers(fixed_power, scenario):
    from uavnoma import ao

    a = ao.initialize(scenario.params, scenario.geometry, scenario.link)
    assert fixed_power.allocation.pw == a.pw
    assert fixed_power.stage_traces["power"] == []


def test_joint_is_no_worse_than_restricted_schemes(default_report, fixed_location, fixed_power):
    j = default_report.log10_objective
    assert j <= fixed_location.log10_objective + 1e-9
    assert j <= fixed_power.log10_objective + 1e-9


def test_required_sinr():
    g = baselines.required_sinr(1e-5, 100, 100)
    assert fbl.dep(fbl.FblPoint(g, 100, 100)) <= 1e-5
    assert fbl.dep(fbl.FblPoint(g * (1 - 1e-9), 100, 100)) > 1e-5 * (1 - 1e-6)
    # target above one half: capacity alone suffices
    assert baselines.required_sinr(0.6, 50, 100) == pytest.approx(3.0, rel=1e-12)


SMALL = dict(noise_bs=1.0, noise_dev=1.0, beta0_sq=1.0, payload_bits=8, m_total=16, eps_uav_max=0.01)


def test_oma_matches_grid_search():
    p = SystemParams(p_max=20.0, e_tot=150.0, **SMALL)
    h_br, h_bd = 2.0, 0.3
    pt = baselines.oma_optimum(p, h_br, h_bd)
    assert pt is not None
    assert baselines.oma_violations(pt, p, h_br, h_bd) == []
    ps = np.linspace(1e-3, p.p_max, 400)
    P1, P2 = np.meshgrid(ps, ps, indexing="ij")
    best = math.inf
    with np.errstate(all="ignore"):
        for m1 in range(1, p.m_total):
            for m2 in range(1, p.m_total - m1 + 1):
                le2 = log_dep_ref(P2 * h_br, m2, p.payload_bits)
                ok = (le2 <= math.log(p.eps_uav_max)) & (m1 * P1 + m2 * P2 <= p.e_tot)
                if ok.any():
                    best = min(best, float(np.min(np.where(ok, log_dep_ref(P1 * h_bd, m1, p.payload_bits), np.inf))))
    # the exact optimum cannot lose to a grid point and a fine grid gets close to it
    assert pt.log_eps1 <= best + 1e-12
    assert pt.log_eps1 == pytest.approx(best, rel=1e-2)


def test_oma_improves_with_more_blocklength():
    vals = []
    for m_tot in (12, 16, 24, 32):
        p = SystemParams(p_max=20.0, e_tot=1e6, **{**SMALL, "m_total": m_tot})
        vals.append(baselines.oma_optimum(p, 2.0, 0.3).log_eps1)
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_oma_report_on_default(scenario):
    sc = scenario
    rep = baselines.solve_oma(sc.params, sc.geometry, sc.link)
    assert rep.status is AoStatus.CONVERGED
    a = rep.allocation
    assert a.pw.pu == 0.0
    h_br, h_bd = baselines.oma_gains(sc.params, sc.geometry, sc.link)
    pt = baselines.OmaPoint(a.pw.p1, a.pw.p2, a.m.m_p1, a.m.m_p2, rep.breakdown.log_obj, rep.breakdown.log_bar_uav)
    assert baselines.oma_violations(pt, sc.params, h_br, h_bd) == []


def test_oma_infeasible_when_target_unreachable():
    p = SystemParams(p_max=1e-9, e_tot=1.0, **SMALL)
    assert baselines.oma_optimum(p, 1e-3, 1e-3) is None


def test_run_scheme_dispatch(scenario):
    sc = scenario
    assert baselines.run_scheme("oma", sc.params, sc.geometry, sc.link).scheme == "oma"
    with pytest.raises(InvalidInput):
        baselines.run_scheme("tdma", sc.params, sc.geometry, sc.link)
    assert baselines.SCHEMES == ("joint", "fixed-location", "fixed-power", "oma")
