"""Comparison schemes: fixed UAV location, fixed powers, and OMA.

The first two reuse the alternating loop with one stage switched off.  The
OMA scheme serves the UAV and the device in separate blocks with no
interference; the device is served directly and the relay is unused.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import brentq

from . import ao, fbl
from .ao import Allocation, AoReport, AoStatus, Violation
from .config import DirectLink, Geometry, SolverSettings, SystemParams, default_uav_xy
from .dep import BlocklengthPair, DepBreakdown
from .errors import InvalidInput
from .link import PowerTriple


class BaselineKind(str, Enum):
    FIXED_LOCATION = "fixed-location"
    FIXED_POWER = "fixed-power"
    OMA = "oma"


@dataclass(frozen=True)
class Baseline:
    kind: BaselineKind
    fixed_q: np.ndarray | None = None
    fixed_pw: PowerTriple | None = None


def _midpoint_q(params, geom):
    xy = default_uav_xy(params, geom.controller, geom.device)
    return np.array([xy[0], xy[1], geom.uav[2]])


def solve_fixed_location(params: SystemParams, geom: Geometry, direct: DirectLink, fixed_q=None,
                         settings: SolverSettings | None = None, **kw) -> AoReport:
    """Alternating loop with the UAV held at ``fixed_q`` (default: clamped midpoint)."""
    q = _midpoint_q(params, geom) if fixed_q is None else np.asarray(fixed_q, float)
    try:
        start = ao.initialize(params, geom, direct, q=q)
    except ao.Infeasible as exc:
        return _infeasible("fixed-location", str(exc))
    return ao.solve(params, geom, direct, settings=settings, start=start, optimize_location=False,
                    scheme=BaselineKind.FIXED_LOCATION.value, **kw)


def solve_fixed_power(params: SystemParams, geom: Geometry, direct: DirectLink, fixed_pw: PowerTriple | None = None,
                      settings: SolverSettings | None = None, **kw) -> AoReport:
    """Alternating loop with powers held at ``fixed_pw`` (default: the initializer's powers)."""
    try:
        start = ao.initialize(params, geom, direct)
    except ao.Infeasible as exc:
        return _infeasible("fixed-power", str(exc))
    if fixed_pw is not None:
        start = start.with_(pw=fixed_pw)
        if ao.check_feasibility(start, params, geom, direct):
            m = ao._blocklength_candidate(start, ao.allocation_link(start, geom, params, direct), params)
            if m is None or ao.check_feasibility(m, params, geom, direct):
                return _infeasible("fixed-power", "fixed powers admit no feasible blocklength pair")
            start = m
    return ao.solve(params, geom, direct, settings=settings, start=start, optimize_power=False,
                    scheme=BaselineKind.FIXED_POWER.value, **kw)


def _infeasible(scheme, msg):
    return AoReport(None, None, 0, [], [], {"power": [], "blocklength": [], "location": []},
                    AoStatus.INFEASIBLE, scheme, 0, msg)


# OMA --------------------------------------------------------------------

def required_sinr(target_eps: float, m: int, d: int) -> float:
    """Smallest SINR with DEP <= target at blocklength m (DEP is decreasing in SINR)."""
    x_star = fbl.q_inv(target_eps)
    lo = math.log(math.expm1(d * fbl.LN2 / m))  # capacity equals the rate here, f = 0
    if x_star <= 0:
        return math.exp(lo)
    hi = lo + 1.0
    while fbl.f_arg_array(math.exp(hi), m, d) < x_star:
        hi += 1.0
    g = lambda lg: float(fbl.f_arg_array(math.exp(lg), m, d)) - x_star
    lg = brentq(g, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=200)
    # land on the feasible side of the root
    while g(lg) < 0:
        lg = math.nextafter(lg, math.inf)
    return math.exp(lg)


@dataclass(frozen=True)
class OmaPoint:
    p1: float
    p2: float
    m1: int
    m2: int
    log_eps1: float
    log_eps2: float


def oma_gains(params: SystemParams, geom: Geometry, direct: DirectLink, q=None):
    q = _midpoint_q(params, geom) if q is None else np.asarray(q, float)
    h_br = params.beta0_sq / float(np.sum((q - geom.controller) ** 2))
    return h_br, direct.gain_sq


def oma_violations(pt: OmaPoint, params: SystemParams, h_br: float, h_bd: float) -> list:
    """Literal constraint check of the OMA problem (its own constraint set)."""
    out = []
    for name, p in (("p1", pt.p1), ("p2", pt.p2)):
        if p > params.p_max:
            out.append(Violation("power", p - params.p_max, f"{name}={p:.6g} > p_max"))
    if pt.m1 + pt.m2 > params.m_total:
        out.append(Violation("blocklength", pt.m1 + pt.m2 - params.m_total, "m1+m2 > M"))
    e = pt.m1 * pt.p1 + pt.m2 * pt.p2
    if e > params.e_tot:
        out.append(Violation("energy", e - params.e_tot, f"energy {e:.6g} > e_tot"))
    g2 = pt.p2 * h_br / params.noise_bs
    le2 = fbl.log_dep(fbl.FblPoint(g2, pt.m2, params.payload_bits)) if g2 > 0 else 0.0
    if le2 > math.log(params.eps_uav_max):
        out.append(Violation("reliability", math.exp(le2) - params.eps_uav_max, "eps2 > eps2_max"))
    return out


def oma_optimum(params: SystemParams, h_br: float, h_bd: float):
    """Exact optimum over every (m1, m2) pair.

    For a fixed pair the device DEP falls with p1 and the UAV DEP with p2, so
    p2 sits at the smallest value meeting the UAV target and p1 takes the
    rest of the energy, capped at p_max.  Returns ``OmaPoint`` or None.
    """
    d = params.payload_bits
    best = None
    for m2 in range(1, params.m_total):
        try:
            g2 = required_sinr(params.eps_uav_max, m2, d)
        except (OverflowError, ValueError):
            continue
        p2 = g2 * params.noise_bs / h_br
        if p2 > params.p_max:
            continue
        m1 = np.arange(1, params.m_total - m2 + 1)
        p1 = np.minimum(params.p_max, (params.e_tot - m2 * p2) / m1)
        ok = p1 > 0
        if not ok.any():
            continue
        m1, p1 = m1[ok], p1[ok]
        g1 = p1 * h_bd / params.noise_bs
        le1 = fbl.log_q_func(fbl.f_arg_array(g1, m1, d))
        k = int(np.argmin(le1))
        if best is None or le1[k] < best.log_eps1:
            le2 = fbl.log_dep(fbl.FblPoint(g2, m2, d))
            best = OmaPoint(float(p1[k]), p2, int(m1[k]), m2, float(le1[k]), le2)
    return best


def solve_oma(params: SystemParams, geom: Geometry, direct: DirectLink, q=None, **_) -> AoReport:
    h_br, h_bd = oma_gains(params, geom, direct, q)
    pt = oma_optimum(params, h_br, h_bd)
    if pt is None:
        return _infeasible(BaselineKind.OMA.value, "no (m1, m2) pair meets the UAV target within energy and power")
    if oma_violations(pt, params, h_br, h_bd):
        raise ao.ConsistencyError(f"OMA optimum violates its constraints: {oma_violations(pt, params, h_br, h_bd)}")
    e1, e2 = fbl.from_log(pt.log_eps1), fbl.from_log(pt.log_eps2)
    bd = DepBreakdown(e1, e2, 0.0, 0.0, 1.0, e2, e1, e1, pt.log_eps1, pt.log_eps2, pt.log_eps1)
    qv = _midpoint_q(params, geom) if q is None else np.asarray(q, float)
    alloc = Allocation(PowerTriple(pt.p1, pt.p2, 0.0), BlocklengthPair(pt.m1, pt.m2), qv)
    ln10 = math.log(10)
    return AoReport(alloc, bd, 1, [e1], [pt.log_eps1 / ln10], {"power": [], "blocklength": [], "location": []},
                    AoStatus.CONVERGED, BaselineKind.OMA.value, 1)


SCHEMES = ("joint", "fixed-location", "fixed-power", "oma")


def run_scheme(scheme: str, params: SystemParams, geom: Geometry, direct: DirectLink,
               settings: SolverSettings | None = None) -> AoReport:
    if scheme == "joint":
        return ao.solve(params, geom, direct, settings=settings)
    if scheme == "fixed-location":
        return solve_fixed_location(params, geom, direct, settings=settings)
    if scheme == "fixed-power":
        return solve_fixed_power(params, geom, direct, settings=settings)
    if scheme == "oma":
        return solve_oma(params, geom, direct)
    raise InvalidInput(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
