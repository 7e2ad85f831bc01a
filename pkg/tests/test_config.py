import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from uavnoma.config import (
    DirectLink,
    Geometry,
    LinkSource,
    SolverSettings,
    SystemParams,
    db_to_linear,
    dbm_to_watts,
    default_uav_xy,
    linear_to_db,
    load_scenario,
    noise_power,
    parse_override,
    rayleigh_direct_link,
    scenario_to_dict,
)
from uavnoma.errors import InvalidInput, ScenarioError


def test_db_to_linear_examples():
    assert db_to_linear(0.0) == 1.0
    assert db_to_linear(-50.0) == pytest.approx(1e-5, rel=1e-12)
    assert dbm_to_watts(40.0) == pytest.approx(10.0, rel=1e-12)


@pytest.mark.parametrize("bad", [math.inf, -math.inf, math.nan])
def test_db_to_linear_rejects_non_finite(bad):
    with pytest.raises(InvalidInput):
        db_to_linear(bad)


def test_noise_power_examples():
    assert noise_power(-174.0, 1e6) == pytest.approx(3.9811e-15, rel=1e-4)
    assert noise_power(-174.0, 1.0) == pytest.approx(3.9811e-21, rel=1e-4)
    assert noise_power(0.0, 1.0) == pytest.approx(1e-3, rel=1e-12)


@pytest.mark.parametrize("bw", [0.0, -1.0])
def test_noise_power_rejects_bad_bandwidth(bw):
    with pytest.raises(InvalidInput):
        noise_power(-174.0, bw)


@given(st.floats(min_value=1e-300, max_value=1e300))
def test_db_round_trip(x):
    assert db_to_linear(linear_to_db(x)) == pytest.approx(x, rel=1e-12)


def test_defaults():
    sc = load_scenario()
    p = sc.params
    assert (p.m_total, p.payload_bits, p.uav_height) == (100, 100, 80.0)
    assert p.p_max == pytest.approx(10.0)
    assert p.e_tot == 10.0
    assert p.eps_uav_max == 1e-8
    assert (p.x_min, p.x_max, p.y_min, p.y_max) == (30.0, 120.0, 30.0, 120.0)
    assert p.beta0_sq == pytest.approx(1e-5)
    assert p.noise_bs == pytest.approx(noise_power(-174.0, 1e6))
    # UAV starts above the clamped midpoint of controller and device
    assert np.allclose(sc.geometry.uav, [75.0, 75.0, 80.0])
    assert sc.geometry.controller[2] == 0.0 and sc.geometry.device[2] == 0.0
    assert sc.link.source is LinkSource.EXPLICIT
    assert sc.link.gain_sq == pytest.approx(1e-5 / (150.0**2 * 2))


def test_bounds_ordering_error_names_field():
    with pytest.raises(ScenarioError) as exc:
        load_scenario({"system": {"x_min": 120.0, "x_max": 30.0}})
    assert exc.value.field == "system.x_min"


def test_explicit_direct_link_passes_through():
    sc = load_scenario("[link]\ngain_bd_sq = 1.0e-12\n")
    assert sc.link == DirectLink(1e-12, LinkSource.EXPLICIT)


def test_db_keys_convert():
    sc = load_scenario({"system": {"p_max_dbm": 30.0, "beta0_sq_db": -40.0, "noise_psd_dbm_per_hz": -170.0}})
    assert sc.params.p_max == pytest.approx(1.0)
    assert sc.params.beta0_sq == pytest.approx(1e-4)
    assert sc.params.noise_bs == pytest.approx(noise_power(-170.0, 1e6))
    assert sc.params.noise_dev == sc.params.noise_bs


@pytest.mark.parametrize(
    "doc, field",
    [
        ({"system": {"bogus": 1}}, "system.bogus"),
        ({"system": {"m_total": 1}}, "system.m_total"),
        ({"system": {"m_total": 10.5}}, "system.m_total"),
        ({"system": {"eps_uav_max": 0.5}}, "system.eps_uav_max"),
        ({"system": {"p_max": -1.0}}, "system.p_max"),
        ({"system": {"e_tot": -1.0}}, "system.e_tot"),
        ({"system": {"p_max": "ten"}}, "system.p_max"),
        ({"system": {"p_max": 1.0, "p_max_dbm": 30.0}}, "system.p_max_dbm"),
        ({"geometry": {"device": [1.0]}}, "geometry.device"),
        ({"geometry": {"device": [0.0, 0.0]}}, "geometry.device"),
        ({"geometry": {"uav": [10.0, 10.0, 50.0]}}, "geometry.uav"),
        ({"link": {"gain_bd_sq": 1e-12, "rayleigh_seed": 3}}, "link.rayleigh_seed"),
        ({"link": {"gain_bd_sq": 0.0}}, "link.gain_bd_sq"),
        ({"solver": {"sca_tol": 0.0}}, "solver.sca_tol"),
    ],
)
def test_invalid_documents_name_the_field(doc, field):
    with pytest.raises(ScenarioError) as exc:
        load_scenario(doc)
    assert exc.value.field == field


def test_invalid_toml_text():
    with pytest.raises(ScenarioError):
        load_scenario("system = [unclosed\n")


def test_overrides_and_file(tmp_path):
    path = tmp_path / "s.toml"
    path.write_text('[system]\nm_total = 150\n[geometry]\ndevice = [200.0, 0.0]\n')
    sc = load_scenario(path, ["system.uav_height=100", "link.rayleigh_seed=7"])
    assert sc.params.m_total == 150
    assert sc.params.uav_height == 100.0
    assert sc.geometry.uav[2] == 100.0
    assert np.allclose(sc.geometry.device, [200.0, 0.0, 0.0])
    assert sc.link.source is LinkSource.RAYLEIGH and sc.link.seed == 7
    assert parse_override("solver.sca_tol = 1e-5") == ("solver.sca_tol", 1e-5)
    with pytest.raises(ScenarioError):
        parse_override("no-equals-sign")


def test_loading_is_deterministic():
    doc = {"link": {"rayleigh_seed": 11}, "system": {"e_tot": 5.0}}
    assert load_scenario(doc) == load_scenario(doc)


def test_rayleigh_draw_is_seeded_and_positive():
    sc = load_scenario()
    a = rayleigh_direct_link(sc.params, sc.geometry, 4)
    b = rayleigh_direct_link(sc.params, sc.geometry, 4)
    c = rayleigh_direct_link(sc.params, sc.geometry, 5)
    assert a == b and a.gain_sq > 0 and a.gain_sq != c.gain_sq


def test_rayleigh_mean_matches_free_space():
    sc = load_scenario()
    draws = [rayleigh_direct_link(sc.params, sc.geometry, s).gain_sq for s in range(4000)]
    mean = sc.params.beta0_sq / 45000.0
    assert np.mean(draws) == pytest.approx(mean, rel=0.05)


def test_geometry_invariants():
    with pytest.raises(ScenarioError):
        Geometry.planar((0, 0), (0, 0), (1, 1), 80)
    with pytest.raises(ScenarioError):
        Geometry.planar((0, 0), (1, 0), (1, 1), 0.0)
    g = Geometry.planar((0, 0), (1, 0), (1, 1), 5.0)
    with pytest.raises(ValueError):
        g.uav[0] = 3.0


def test_midpoint_is_clamped():
    p = SystemParams(x_min=100.0, x_max=120.0)
    assert default_uav_xy(p, (0, 0), (150, 150)) == [100.0, 75.0]


def test_degenerate_box_and_zero_energy_are_allowed():
    p = SystemParams(x_min=50.0, x_max=50.0, e_tot=0.0)
    assert p.x_min == p.x_max and p.e_tot == 0.0


def test_solver_settings_validation():
    with pytest.raises(ScenarioError):
        SolverSettings(outer_max_iter=0)


def test_scenario_to_dict_round_trips():
    sc = load_scenario({"system": {"m_total": 120}, "link": {"rayleigh_seed": 2}})
    d = scenario_to_dict(sc)
    assert d["system.m_total"] == 120
    assert d["link.rayleigh_seed"] == 2
    doc = {k: v for k, v in d.items() if not k.startswith("link.")}
    doc["link.gain_bd_sq"] = d["link.gain_bd_sq"]
    again = load_scenario(doc)
    assert again.params == sc.params and again.geometry == sc.geometry
    assert again.link.gain_sq == sc.link.gain_sq
