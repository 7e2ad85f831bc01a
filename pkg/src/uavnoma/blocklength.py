"""Blocklength stage: exhaustive search over the phase-1 / phase-2 split.

For fixed powers and position the pair ``(m', m3)`` is chosen by
enumerating the rectangle allowed by the capacity lower bounds.  All DEPs
are evaluated in the log domain over whole rows of the lattice at once.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from . import fbl
from .config import SystemParams
from .dep import BlocklengthPair, full_breakdown, lattice_logs
from .errors import InfeasibleBlocklength, InvalidInput
from .link import LinkState, PowerTriple, all_sinrs
from .sca import format_number


@dataclass(frozen=True)
class BlocklengthBounds:
    m2_lb: int
    m3_lb: int
    m2_ub: int

    @property
    def empty(self) -> bool:
        return self.m2_lb > self.m2_ub


def _strict_lb(d, gamma):
    """Smallest integer m with ``m > D / log2(1 + gamma)``."""
    c = float(fbl.capacity(gamma))
    if not c > 0:
        raise InvalidInput(f"SINR {gamma} gives no capacity; blocklength lower bound unbounded")
    return int(math.floor(d / c)) + 1


def compute_bounds(link: LinkState, pw: PowerTriple, params: SystemParams) -> BlocklengthBounds:
    s = all_sinrs(link, pw, params)
    if not (s.gamma2 > 0 and s.gamma3 > 0):
        raise InvalidInput(f"blocklength bounds need gamma2 > 0 and gamma3 > 0, got {s.gamma2}, {s.gamma3}")
    m2 = _strict_lb(params.payload_bits, s.gamma2)
    m3 = _strict_lb(params.payload_bits, s.gamma3)
    return BlocklengthBounds(m2, m3, params.m_total - m3)


def energy_feasible_m(pw: PowerTriple, m: BlocklengthPair, params: SystemParams) -> bool:
    return m.m_p1 * (pw.p1 + pw.p2) + pw.pu * m.m_p2 <= params.e_tot


@dataclass
class Lattice:
    """Every enumerated pair with its log objective, log eps_bar2 and energy."""

    m_prime: np.ndarray
    m3: np.ndarray
    log_obj: np.ndarray
    log_bar_uav: np.ndarray
    energy: np.ndarray

    def feasible(self, params: SystemParams):
        return (self.log_bar_uav <= math.log(params.eps_uav_max)) & (self.energy <= params.e_tot)

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["m_prime", "m3", "log10_objective", "log10_eps_bar_uav", "energy"])
        ln10 = math.log(10)
        for row in zip(self.m_prime, self.m3, self.log_obj, self.log_bar_uav, self.energy):
            w.writerow([int(row[0]), int(row[1]), format_number(row[2] / ln10), format_number(row[3] / ln10), format_number(row[4])])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _log1mexp(x):
    with np.errstate(divide="ignore"):
        return np.where(x > -0.6931, np.log(-np.expm1(np.minimum(x, -1e-300))), np.log1p(-np.exp(x)))


def enumerate_pairs(link: LinkState, pw: PowerTriple, params: SystemParams, m_prime_range, m3_lb=1) -> Lattice:
    """Evaluate every pair ``m3_lb <= m3 <= M - m'`` for ``m'`` in the range."""
    mp = np.arange(m_prime_range[0], m_prime_range[1] + 1)
    m_tot = params.m_total
    mp = mp[(mp >= 1) & (mp <= m_tot - m3_lb)]
    m3_all = np.arange(1, m_tot + 1)
    s = all_sinrs(link, pw, params)
    l1, l2, lf, l12, l3 = lattice_logs(s, mp, m3_all, params.payload_bits)
    rows_mp, rows_m3 = [], []
    for i, m in enumerate(mp):
        m3 = np.arange(m3_lb, m_tot - m + 1)
        rows_mp.append(np.full(len(m3), m))
        rows_m3.append(m3)
    if not rows_mp:
        z = np.zeros(0)
        return Lattice(z.astype(int), z.astype(int), z, z, z)
    idx_mp = np.concatenate([np.full(len(r), i) for i, r in enumerate(rows_mp)])
    all_mp = np.concatenate(rows_mp)
    all_m3 = np.concatenate(rows_m3)
    e1, e2, ef, e12 = l1[idx_mp], l2[idx_mp], lf[idx_mp], l12[idx_mp]
    e3 = l3[all_m3 - 1]
    log_obj = e1 + np.logaddexp(e3, e12)
    log_bar = np.logaddexp(e2 + _log1mexp(e12), ef + e12)
    energy = all_mp * (pw.p1 + pw.p2) + pw.pu * all_m3
    return Lattice(all_mp, all_m3, log_obj, log_bar, energy)


def _best(lat: Lattice, params: SystemParams):
    ok = lat.feasible(params)
    if not ok.any():
        return None
    # lexicographic: objective, then smaller m', then smaller m3
    order = np.lexsort((lat.m3[ok], lat.m_prime[ok], lat.log_obj[ok]))
    k = np.flatnonzero(ok)[order[0]]
    return int(lat.m_prime[k]), int(lat.m3[k])


def search(link: LinkState, pw: PowerTriple, params: SystemParams, lattice_out=None):
    """Best ``(m', m3)`` within the capacity bounds.

    Returns ``(BlocklengthPair, DepBreakdown)``.  ``lattice_out`` (a path or
    writable text file) receives the enumerated lattice as CSV.
    """
    b = compute_bounds(link, pw, params)
    if b.empty:
        raise InfeasibleBlocklength(f"empty search range: m2_lb={b.m2_lb} > m2_ub={b.m2_ub}")
    lat = enumerate_pairs(link, pw, params, (b.m2_lb, b.m2_ub), b.m3_lb)
    if lattice_out is not None:
        text = lat.to_csv()
        if hasattr(lattice_out, "write"):
            lattice_out.write(text)
        else:
            with open(lattice_out, "w", newline="") as fh:
                fh.write(text)
    best = _best(lat, params)
    if best is None:
        rel = lat.log_bar_uav <= math.log(params.eps_uav_max)
        binding = "reliability (eps_bar2 <= eps2_max)" if not rel.any() else "energy"
        if rel.any() and not (lat.energy <= params.e_tot).any():
            binding = "energy"
        elif rel.any():
            binding = "reliability and energy jointly"
        raise InfeasibleBlocklength(binding)
    m = BlocklengthPair(*best)
    return m, full_breakdown(link, pw, m, params)


def brute_force(link: LinkState, pw: PowerTriple, params: SystemParams):
    """Unrestricted enumeration over every pair with ``m' + m3 <= M``; None if infeasible."""
    lat = enumerate_pairs(link, pw, params, (1, params.m_total - 1), 1)
    best = _best(lat, params)
    return None if best is None else BlocklengthPair(*best)
