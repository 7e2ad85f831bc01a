"""Per-link DEPs and their combination into effective error probabilities.

All components are computed in the log domain first; probabilities are
materialised with :func:`uavnoma.fbl.from_log` so that values far below the
double range stay positive.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, astuple, fields

import numpy as np

from . import fbl
from .config import SystemParams
from .errors import ConsistencyError, InvalidInput
from .link import LinkState, PowerTriple, all_sinrs, sinr_uav_failed_sic, sinr_uav_s1

BREAKDOWN_FIELDS = ("eps1", "eps2", "eps2_fail", "eps12", "eps3", "eps_bar_uav", "eps_bar_dev", "eps_obj")


@dataclass(frozen=True)
class BlocklengthPair:
    m_p1: int
    m_p2: int

    def __post_init__(self):
        if int(self.m_p1) != self.m_p1 or int(self.m_p2) != self.m_p2:
            raise InvalidInput(f"blocklengths must be integers: {self}")
        if self.m_p1 < 1 or self.m_p2 < 1:
            raise InvalidInput(f"blocklengths must be >= 1: {self}")
        object.__setattr__(self, "m_p1", int(self.m_p1))
        object.__setattr__(self, "m_p2", int(self.m_p2))

    def fits(self, m_total: int) -> bool:
        return self.m_p1 + self.m_p2 <= m_total


@dataclass(frozen=True)
class DepBreakdown:
    eps1: float
    eps2: float
    eps2_fail: float
    eps12: float
    eps3: float
    eps_bar_uav: float
    eps_bar_dev: float
    eps_obj: float
    # natural logs, exact even where the probabilities underflow
    log_obj: float = float("nan")
    log_bar_uav: float = float("nan")
    log_bar_dev: float = float("nan")

    def as_row(self) -> tuple:
        return tuple(getattr(self, f) for f in BREAKDOWN_FIELDS)

    @property
    def log10_obj(self) -> float:
        return self.log_obj / math.log(10.0)


def _clamp(p):
    """Absorb last-ulp rounding; anything larger is a model bug."""
    if p < -1e-12 or p > 1 + 1e-12:
        raise ConsistencyError(f"probability {p!r} outside [0, 1]")
    return min(max(p, 0.0), 1.0)


def _eps(gamma, m, d):
    return _clamp(fbl.dep(fbl.FblPoint(gamma, m, d)))


def eps12(link: LinkState, pw: PowerTriple, m: BlocklengthPair, params: SystemParams):
    """DEP of the device message s1 at the UAV (first SIC step)."""
    return _eps(sinr_uav_s1(link, pw, params), m.m_p1, params.payload_bits)


def eps2_fail_from_gamma(gamma_fail: float, m: int, d: int):
    if d / m > fbl.capacity(gamma_fail):
        return 1.0
    return _eps(gamma_fail, m, d)


def eps2_fail(link: LinkState, pw: PowerTriple, m: BlocklengthPair, params: SystemParams):
    """DEP of s2 at the UAV given that s1 was not removed."""
    return eps2_fail_from_gamma(sinr_uav_failed_sic(link, pw, params), m.m_p1, params.payload_bits)


def effective_eps_uav(eps2, eps2_fail, eps12):
    return eps2 * (1 - eps12) + eps2_fail * eps12


def effective_eps_uav_dc(eps2, eps2_fail, eps12):
    """Same quantity written as a difference of squares."""
    e = eps2_fail - eps2
    return eps2 + 0.5 * (eps12 + e) ** 2 - 0.5 * (eps12 * eps12 + e * e)


def effective_eps_device(eps1, eps3, eps12):
    return (eps3 * (1 - eps12) + eps12) * eps1


def objective_simplified(eps1, eps3, eps12):
    """Device objective with the triple product dropped: ``eps1 (eps3 + eps12)``."""
    return eps1 * (eps3 + eps12)


def objective_dc(eps1, eps3, eps12):
    v = eps3 + eps12
    return 0.5 * (eps1 + v) ** 2 - 0.5 * (eps1 * eps1 + v * v)


def _log1mexp(x):
    """log(1 - exp(x)) for x <= 0."""
    if x == 0.0:
        return -math.inf
    return math.log(-math.expm1(x)) if x > -0.6931 else math.log1p(-math.exp(x))


def _logaddexp(a, b):
    return float(np.logaddexp(a, b))


@dataclass(frozen=True)
class LogComponents:
    eps1: float
    eps2: float
    eps2_fail: float
    eps12: float
    eps3: float

    @property
    def obj(self):
        return self.eps1 + _logaddexp(self.eps3, self.eps12)

    @property
    def bar_uav(self):
        return _logaddexp(self.eps2 + _log1mexp(self.eps12), self.eps2_fail + self.eps12)

    @property
    def bar_dev(self):
        return self.eps1 + _logaddexp(self.eps3 + _log1mexp(self.eps12), self.eps12)


def log_components(link: LinkState, pw: PowerTriple, m: BlocklengthPair, params: SystemParams) -> LogComponents:
    s = all_sinrs(link, pw, params)
    d = params.payload_bits
    mp, m3 = m.m_p1, m.m_p2

    def lg(g, mm):
        return fbl.log_dep(fbl.FblPoint(g, mm, d))

    lfail = 0.0 if d / mp > fbl.capacity(s.gamma_fail) else lg(s.gamma_fail, mp)
    return LogComponents(lg(s.gamma1, mp), lg(s.gamma2, mp), lfail, lg(s.gamma_s1, mp), lg(s.gamma3, m3))


def full_breakdown(link: LinkState, pw: PowerTriple, m: BlocklengthPair, params: SystemParams) -> DepBreakdown:
    lc = log_components(link, pw, m, params)
    e1, e2, e2f, e12, e3 = (_clamp(fbl.from_log(v)) for v in astuple(lc))
    bar_uav = effective_eps_uav(e2, e2f, e12)
    bar_dev = effective_eps_device(e1, e3, e12)
    obj = objective_simplified(e1, e3, e12)
    return DepBreakdown(e1, e2, e2f, e12, e3, bar_uav, bar_dev, obj, lc.obj, lc.bar_uav, lc.bar_dev)


def log_objective(link, pw, m, params) -> float:
    return log_components(link, pw, m, params).obj


def lattice_logs(sinrs, m_prime, m3, d: int):
    """Vectorised log components over arrays of blocklengths.

    Returns ``(log eps1, log eps2, log eps2_fail, log eps12)`` indexed by
    ``m_prime`` and ``log eps3`` indexed by ``m3``.
    """
    mp = np.asarray(m_prime, dtype=float)
    m3 = np.asarray(m3, dtype=float)

    def lg(g, mm):
        if g <= 0:
            return np.zeros_like(mm)
        return fbl.log_q_func(fbl.f_arg_array(g, mm, d))

    l1 = lg(sinrs.gamma1, mp)
    l2 = lg(sinrs.gamma2, mp)
    l12 = lg(sinrs.gamma_s1, mp)
    if sinrs.gamma_fail > 0:
        lf = np.where(d / mp > fbl.capacity(sinrs.gamma_fail), 0.0, lg(sinrs.gamma_fail, mp))
    else:
        lf = np.zeros_like(mp)
    l3 = lg(sinrs.gamma3, m3)
    return l1, l2, lf, l12, l3


def breakdown_header():
    return list(BREAKDOWN_FIELDS)


assert tuple(f.name for f in fields(DepBreakdown))[:8] == BREAKDOWN_FIELDS
