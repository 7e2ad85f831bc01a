"""Alternating optimisation over powers, blocklengths and UAV position.

One outer cycle runs the power stage, the blocklength search and the
placement stage in that order.  Each stage result is accepted only if the
device objective does not get worse, and :func:`check_feasibility` is
asserted after every stage.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import blocklength, fbl
from .config import DirectLink, Geometry, SolverSettings, SystemParams, default_uav_xy
from .dep import BlocklengthPair, DepBreakdown, full_breakdown, log_components
from .errors import ConsistencyError, Infeasible, InfeasibleBlocklength, InvalidInput, NumericalFailure, RegionViolation, SingularityError
from .link import LinkState, PowerTriple, link_from_distances
from .location import solve_location_stage
from .power import check_region, direct_terms, solve_power_stage
from .sca import ScaTrace, format_number


class AoStatus(str, Enum):
    CONVERGED = "converged"
    ITERATION_LIMIT = "iteration-limit"
    STALLED = "converged-by-stall"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class Allocation:
    pw: PowerTriple
    m: BlocklengthPair
    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        if q.shape != (3,):
            raise InvalidInput("q must be a 3-vector")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    def with_(self, pw=None, m=None, q=None):
        return Allocation(pw or self.pw, m or self.m, self.q if q is None else q)

    def as_dict(self):
        return {
            "p1": self.pw.p1, "p2": self.pw.p2, "pu": self.pw.pu,
            "m_prime": self.m.m_p1, "m3": self.m.m_p2,
            "qx": float(self.q[0]), "qy": float(self.q[1]), "qz": float(self.q[2]),
        }


@dataclass(frozen=True)
class Violation:
    constraint: str
    amount: float
    detail: str = ""


def allocation_link(alloc: Allocation, geom: Geometry, params: SystemParams, direct: DirectLink) -> LinkState:
    s_br = float(np.sum((alloc.q - geom.controller) ** 2))
    s_rd = float(np.sum((alloc.q - geom.device) ** 2))
    return link_from_distances(s_br, s_rd, params, direct.gain_sq)


def check_feasibility(alloc: Allocation, params: SystemParams, geom: Geometry, direct: DirectLink) -> list:
    """Every violated constraint with its signed (positive) excess; empty iff feasible."""
    out = []
    pw, m, q = alloc.pw, alloc.m, alloc.q
    exc = pw.p1 + pw.p2 - params.p_max
    if exc > 0:
        out.append(Violation("power", exc, f"p1+p2={pw.p1 + pw.p2:.6g} > p_max={params.p_max:.6g}"))
    box = max(params.x_min - q[0], q[0] - params.x_max, params.y_min - q[1], q[1] - params.y_max)
    if box > 0:
        out.append(Violation("box", float(box), f"q=({q[0]:.6g}, {q[1]:.6g}) outside the flight box"))
    exc = m.m_p1 + m.m_p2 - params.m_total
    if exc > 0:
        out.append(Violation("blocklength", float(exc), f"m'+m3={m.m_p1 + m.m_p2} > M={params.m_total}"))
    if np.sum((q - geom.controller) ** 2) > 0 and np.sum((q - geom.device) ** 2) > 0:
        try:
            bar = math.exp(log_components(allocation_link(alloc, geom, params, direct), pw, m, params).bar_uav)
        except SingularityError:
            # a zero SINR decodes nothing: the DEP limit is 1
            bar = 1.0
        if bar > params.eps_uav_max:
            out.append(Violation("reliability", bar - params.eps_uav_max, f"eps_bar2={bar:.6g} > {params.eps_uav_max:.6g}"))
    else:
        out.append(Violation("reliability", 1.0, "UAV on top of a ground node"))
    exc = m.m_p1 * (pw.p1 + pw.p2) + pw.pu * m.m_p2 - params.e_tot
    if exc > 0:
        out.append(Violation("energy", exc, f"energy exceeds e_tot={params.e_tot:.6g} by {exc:.6g}"))
    return out


def _assert_feasible(alloc, params, geom, direct, where):
    bad = check_feasibility(alloc, params, geom, direct)
    if bad:
        raise ConsistencyError(f"infeasible allocation after {where}: " + "; ".join(v.detail for v in bad))


def _region_ok(alloc, link, params):
    try:
        check_region(direct_terms(alloc.pw, link, alloc.m, params), alloc.pw.as_array(), alloc.m, params)
    except RegionViolation:
        return False
    return True


# p2 shares tried by the initializer; the first is the nominal 70/30 split
INIT_SHARES = (0.3, 0.1, 0.03, 0.01, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5)


def _midpoint_pair(link, pw, params):
    b = blocklength.compute_bounds(link, pw, params)
    if b.empty:
        return None
    mp = (b.m2_lb + b.m2_ub) // 2
    m3 = (b.m3_lb + params.m_total - mp) // 2
    return BlocklengthPair(mp, max(m3, b.m3_lb))


def _try_point(share, s, params, link, alloc_q, geom, direct):
    """Build a candidate at power scale ``s``; returns (allocation, None) or (None, failed check)."""
    p1 = (1.0 - share) * params.p_max * s
    p2 = share * params.p_max * s
    m = BlocklengthPair(params.m_total // 2, params.m_total - params.m_total // 2)
    pu = 0.0
    for _ in range(4):
        pu = 0.9 * (params.e_tot - m.m_p1 * (p1 + p2)) / m.m_p2
        if pu <= 0:
            return None, "energy"
        try:
            nm = _midpoint_pair(link, PowerTriple(p1, p2, pu), params)
        except InvalidInput:
            return None, "blocklength"
        if nm is None:
            return None, "blocklength"
        if nm == m:
            break
        m = nm
    pu = 0.9 * (params.e_tot - m.m_p1 * (p1 + p2)) / m.m_p2
    if pu <= 0:
        return None, "energy"
    alloc = Allocation(PowerTriple(p1, p2, pu), m, alloc_q)
    bad = check_feasibility(alloc, params, geom, direct)
    if bad:
        return None, bad[0].constraint
    if not _region_ok(alloc, link, params):
        return None, "convexity-region"
    return alloc, None


def initialize(params: SystemParams, geom: Geometry, direct: DirectLink, q=None) -> Allocation:
    """Feasible starting allocation.

    The UAV starts at the box-clamped midpoint (or ``q``); powers follow a
    p1/p2 split scaled by ``s`` (halved up to 40 times), the relay takes 90 %
    of the remaining energy and the blocklengths sit mid-range of their
    capacity bounds.  When the 70/30 split cannot meet the UAV reliability
    target, smaller p2 shares are tried in turn.  Raises :class:`Infeasible`
    naming the check that failed for the nominal split.
    """
    if q is None:
        xy = default_uav_xy(params, geom.controller, geom.device)
        q = np.array([xy[0], xy[1], geom.uav[2]])
    q = np.asarray(q, float)
    s_br = float(np.sum((q - geom.controller) ** 2))
    s_rd = float(np.sum((q - geom.device) ** 2))
    if s_br == 0 or s_rd == 0:
        raise Infeasible("geometry (UAV on top of a ground node)")
    link = link_from_distances(s_br, s_rd, params, direct.gain_sq)
    first_fail = None
    for share in INIT_SHARES:
        s = 1.0
        last = None
        for _ in range(41):
            alloc, why = _try_point(share, s, params, link, q, geom, direct)
            if alloc is not None:
                return alloc
            last = why
            s *= 0.5
        if first_fail is None:
            first_fail = last
    raise Infeasible(first_fail)


@dataclass
class AoReport:
    allocation: Allocation
    breakdown: DepBreakdown
    outer_iterations: int
    objective_history: list
    log10_history: list
    stage_traces: dict
    status: AoStatus
    scheme: str = "joint"
    feasibility_checks: int = 0
    message: str = ""

    @property
    def objective(self):
        return self.breakdown.eps_obj

    @property
    def log10_objective(self):
        return self.breakdown.log10_obj

    def is_monotone(self):
        h = self.log10_history
        return all(b <= a for a, b in zip(h, h[1:]))

    def to_dict(self):
        bd = self.breakdown
        return {
            "scheme": self.scheme,
            "status": self.status.value,
            "outer_iterations": self.outer_iterations,
            "allocation": self.allocation.as_dict() if self.allocation is not None else None,
            "breakdown": None if bd is None else {k: format_number(getattr(bd, k)) for k in bd.__dataclass_fields__},
            "objective_history": [format_number(v) for v in self.objective_history],
            "log10_history": [format_number(v) for v in self.log10_history],
            "stage_iterations": {k: [t.iterations for t in v] for k, v in self.stage_traces.items()},
            "feasibility_checks": self.feasibility_checks,
            "message": self.message,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _log_obj(alloc, link, params):
    return log_components(link, alloc.pw, alloc.m, params).obj


def _blocklength_trace(before, after, params, alloc_before, alloc_after, link_b):
    tr = ScaTrace(("m_prime", "m3"))
    for it, (lo, al) in enumerate(((before, alloc_before), (after, alloc_after))):
        lc = log_components(link_b, al.pw, al.m, params)
        tr.append(
            iteration=it,
            objective_true=fbl.from_log(lo),
            objective_surrogate=fbl.from_log(lo),
            eps_bar_uav=math.exp(lc.bar_uav),
            max_violation=0.0,
            step_norm=float(abs(al.m.m_p1 - alloc_before.m.m_p1) + abs(al.m.m_p2 - alloc_before.m.m_p2)),
            log10_objective=lo / math.log(10),
            m_prime=al.m.m_p1,
            m3=al.m.m_p2,
        )
    tr.iterations = 1
    return tr


def solve(
    params: SystemParams,
    geom: Geometry,
    direct: DirectLink,
    outer_tol: float | None = None,
    outer_max_iter: int | None = None,
    settings: SolverSettings | None = None,
    start: Allocation | None = None,
    optimize_power: bool = True,
    optimize_blocklength: bool = True,
    optimize_location: bool = True,
    scheme: str = "joint",
) -> AoReport:
    """Alternate the three stages until the objective settles.

    Convergence: relative change of the objective over a full cycle at most
    ``outer_tol``.  Disabled stages act as the identity (used by the
    baselines).  Infeasible scenarios produce an ``infeasible`` report rather
    than an exception.
    """
    settings = settings or SolverSettings()
    outer_tol = settings.outer_tol if outer_tol is None else outer_tol
    outer_max_iter = settings.outer_max_iter if outer_max_iter is None else outer_max_iter
    try:
        alloc = start if start is not None else initialize(params, geom, direct)
    except Infeasible as exc:
        return AoReport(None, None, 0, [], [], {"power": [], "blocklength": [], "location": []}, AoStatus.INFEASIBLE, scheme, 0, str(exc))
    checks = 0
    _assert_feasible(alloc, params, geom, direct, "initialization")
    checks += 1
    link = allocation_link(alloc, geom, params, direct)
    cur = _log_obj(alloc, link, params)
    hist = [cur]
    traces = {"power": [], "blocklength": [], "location": []}
    status = AoStatus.ITERATION_LIMIT
    stalled = 0
    it = 0
    while it < outer_max_iter:
        it += 1
        start_cycle = cur
        changed = False

        if optimize_power:
            try:
                st, tr = solve_power_stage(alloc.pw, link, alloc.m, params, settings.sca_tol, settings.sca_max_iter, settings)
                traces["power"].append(tr)
                cand = alloc.with_(pw=st.powers)
                lo = _log_obj(cand, link, params)
                if lo <= cur and not check_feasibility(cand, params, geom, direct):
                    changed |= cand.pw != alloc.pw
                    alloc, cur = cand, lo
            except (RegionViolation, Infeasible, NumericalFailure):
                pass
            _assert_feasible(alloc, params, geom, direct, "power stage")
            checks += 1

        if optimize_blocklength:
            before_alloc, before = alloc, cur
            cand = _blocklength_candidate(alloc, link, params)
            if cand is not None:
                lo = _log_obj(cand, link, params)
                if lo <= cur and not check_feasibility(cand, params, geom, direct) and _region_ok(cand, link, params):
                    changed |= cand.m != alloc.m
                    alloc, cur = cand, lo
            traces["blocklength"].append(_blocklength_trace(before, cur, params, before_alloc, alloc, link))
            _assert_feasible(alloc, params, geom, direct, "blocklength stage")
            checks += 1

        if optimize_location:
            try:
                st, tr = solve_location_stage(
                    (alloc.q[0], alloc.q[1]), alloc.pw, alloc.m, params, geom, direct.gain_sq,
                    settings.sca_tol, settings.sca_max_iter, settings,
                )
                traces["location"].append(tr)
                cand = alloc.with_(q=np.array([st.qx, st.qy, geom.uav[2]]))
                link_c = allocation_link(cand, geom, params, direct)
                lo = _log_obj(cand, link_c, params)
                if lo <= cur and not check_feasibility(cand, params, geom, direct):
                    changed |= not np.array_equal(cand.q, alloc.q)
                    alloc, cur, link = cand, lo, link_c
            except (RegionViolation, Infeasible, NumericalFailure):
                pass
            _assert_feasible(alloc, params, geom, direct, "location stage")
            checks += 1

        hist.append(cur)
        stalled = 0 if changed else stalled + 1
        if -math.expm1(cur - start_cycle) <= outer_tol:
            status = AoStatus.CONVERGED
            break
        if stalled >= 2:
            status = AoStatus.STALLED
            break
    bd = full_breakdown(link, alloc.pw, alloc.m, params)
    ln10 = math.log(10)
    return AoReport(
        alloc, bd, it, [fbl.from_log(v) for v in hist], [v / ln10 for v in hist], traces, status, scheme, checks,
    )


def _blocklength_candidate(alloc: Allocation, link: LinkState, params: SystemParams):
    """Best blocklength pair, retrying once with powers scaled up by 1.2 on an empty range."""
    try:
        m, _ = blocklength.search(link, alloc.pw, params)
        return alloc.with_(m=m)
    except (InfeasibleBlocklength, InvalidInput):
        pass
    pw = alloc.pw
    scale = 1.2
    p_sum = pw.p1 + pw.p2
    if p_sum > 0:
        scale = min(scale, params.p_max / p_sum)
    pw2 = PowerTriple(pw.p1 * scale, pw.p2 * scale, pw.pu * scale)
    try:
        m, _ = blocklength.search(link, pw2, params)
    except (InfeasibleBlocklength, InvalidInput):
        return None
    return alloc.with_(pw=pw2, m=m)
