import csv
import io

import numpy as np
import pytest

from oracles import brute_force_blocklength
from uavnoma import blocklength
from uavnoma.config import SystemParams
from uavnoma.dep import BlocklengthPair, full_breakdown
from uavnoma.errors import InfeasibleBlocklength, InvalidInput
from uavnoma.link import LinkState, PowerTriple

UNIT = SystemParams(noise_bs=1.0, noise_dev=1.0, beta0_sq=1.0, p_max=100.0, e_tot=1e6, eps_uav_max=0.4)


def unit_link(hbr=1.0, hrd=1.0, hbd=1.0):
    return LinkState(hbr, hrd, hbd, 1.0 / hbr, 1.0 / hrd)


def test_bounds_examples():
    # gamma2 = 3: capacity 2 bits, 100 / 2 = 50 exactly, strict bound 51
    b = blocklength.compute_bounds(unit_link(), PowerTriple(1, 3, 7), UNIT)
    assert b.m2_lb == 51
    # gamma3 = 7: 3 bits, 100 / 3 = 33.3
    assert b.m3_lb == 34 and b.m2_ub == 66
    assert not b.empty
    b = blocklength.compute_bounds(unit_link(), PowerTriple(1, 7, 7), UNIT)
    assert (b.m2_lb, b.m3_lb, b.m2_ub) == (34, 34, 66)


def test_empty_range_is_infeasible():
    pw = PowerTriple(1, 1, 1)  # 1 bit per use on both hops needs > 200 symbols
    assert blocklength.compute_bounds(unit_link(), pw, UNIT).empty
    with pytest.raises(InfeasibleBlocklength):
        blocklength.search(unit_link(), pw, UNIT)


def test_zero_sinr_is_invalid():
    with pytest.raises(InvalidInput):
        blocklength.compute_bounds(unit_link(), PowerTriple(1, 0, 7), UNIT)


def test_energy_feasibility_examples():
    pw = PowerTriple(2, 1, 4)
    p = SystemParams(e_tot=10 * 3 + 4 * 5)
    assert blocklength.energy_feasible_m(pw, BlocklengthPair(10, 5), p)
    assert not blocklength.energy_feasible_m(pw, BlocklengthPair(10, 6), p)


def _random_instance(rng):
    m_tot = int(rng.integers(12, 26))
    p = SystemParams(
        noise_bs=1.0, noise_dev=1.0, beta0_sq=1.0, p_max=1e4, e_tot=1e6, eps_uav_max=0.4,
        m_total=m_tot, payload_bits=8,
    )
    link = LinkState(float(rng.uniform(0.5, 2)), float(rng.uniform(0.5, 2)), float(rng.uniform(0.1, 0.5)), 1.0, 1.0)
    pw = PowerTriple(float(rng.uniform(20, 80)), float(rng.uniform(2, 10)), float(rng.uniform(3, 40)))
    return p, link, pw


def test_search_matches_rectangle_brute_force(rng):
    for _ in range(20):
        p, link, pw = _random_instance(rng)
        b = blocklength.compute_bounds(link, pw, p)
        ref = brute_force_blocklength(link, pw, p, b.m2_lb, b.m3_lb)
        try:
            m, bd = blocklength.search(link, pw, p)
        except InfeasibleBlocklength:
            assert ref is None
            continue
        assert (m.m_p1, m.m_p2) == ref[1:]
        assert bd.log_obj == pytest.approx(ref[0], rel=1e-9, abs=1e-12)
        assert m.m_p1 + m.m_p2 <= p.m_total


def test_pairs_outside_the_rectangle_have_a_failed_hop(rng):
    # when the unrestricted optimum leaves the rectangle it does so with eps3 >= 0.5
    outside = 0
    for _ in range(20):
        p, link, pw = _random_instance(rng)
        b = blocklength.compute_bounds(link, pw, p)
        ref = brute_force_blocklength(link, pw, p)
        if ref is None or (ref[1] >= b.m2_lb and ref[2] >= b.m3_lb):
            continue
        outside += 1
        bd = full_breakdown(link, pw, BlocklengthPair(ref[1], ref[2]), p)
        assert max(bd.eps2, bd.eps3) >= 0.5
    assert outside >= 1


def test_brute_force_helper_agrees_with_search(rng):
    p, link, pw = _random_instance(rng)
    m, _ = blocklength.search(link, pw, p)
    assert blocklength.brute_force(link, pw, p) == m


def test_singleton_region():
    # gamma2 = 15 -> m' >= 26; gamma3 = 3 -> m3 >= 51; M = 77 leaves the single pair (26, 51)
    p = SystemParams(noise_bs=1.0, noise_dev=1.0, beta0_sq=1.0, p_max=1e4, e_tot=1e6, eps_uav_max=0.4, m_total=77)
    link = unit_link(hbd=0.1)
    pw = PowerTriple(800, 15, 3)
    b = blocklength.compute_bounds(link, pw, p)
    assert (b.m2_lb, b.m3_lb, b.m2_ub) == (26, 51, 26)
    m, _ = blocklength.search(link, pw, p)
    assert (m.m_p1, m.m_p2) == (26, 51)


def test_larger_budget_never_hurts():
    link = unit_link(hbd=0.2)
    pw = PowerTriple(30, 5, 10)
    base = dict(noise_bs=1.0, noise_dev=1.0, beta0_sq=1.0, p_max=100.0, e_tot=1e6, eps_uav_max=0.4)
    _, small = blocklength.search(link, pw, SystemParams(m_total=100, **base))
    _, big = blocklength.search(link, pw, SystemParams(m_total=120, **base))
    assert big.log_obj <= small.log_obj


def test_excluded_pairs_have_large_errors():
    link = unit_link(hbd=0.2)
    pw = PowerTriple(30, 5, 10)
    b = blocklength.compute_bounds(link, pw, UNIT)
    lat = blocklength.enumerate_pairs(link, pw, UNIT, (1, b.m2_lb - 1), 1)
    from uavnoma.link import all_sinrs
    from uavnoma import fbl

    g2 = all_sinrs(link, pw, UNIT).gamma2
    for mp in np.unique(lat.m_prime):
        assert fbl.dep(fbl.FblPoint(g2, int(mp), UNIT.payload_bits)) >= 0.5


def test_search_is_deterministic():
    link = unit_link(hbd=0.2)
    pw = PowerTriple(30, 5, 10)
    a = blocklength.search(link, pw, UNIT)
    b = blocklength.search(link, pw, UNIT)
    assert a[0] == b[0] and a[1].log_obj == b[1].log_obj


def test_lattice_csv(tmp_path):
    link = unit_link(hbd=0.2)
    pw = PowerTriple(30, 5, 10)
    out = tmp_path / "lat.csv"
    m, _ = blocklength.search(link, pw, UNIT, lattice_out=out)
    text = out.read_bytes().decode()
    assert "\r\n" in text
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["m_prime", "m3", "log10_objective", "log10_eps_bar_uav", "energy"]
    pairs = {(int(r[0]), int(r[1])) for r in rows[1:]}
    assert (m.m_p1, m.m_p2) in pairs
    b = blocklength.compute_bounds(link, pw, UNIT)
    n = sum(UNIT.m_total - mp - b.m3_lb + 1 for mp in range(b.m2_lb, b.m2_ub + 1))
    assert len(rows) - 1 == n
    buf = io.StringIO()
    blocklength.search(link, pw, UNIT, lattice_out=buf)
    assert buf.getvalue() == text
