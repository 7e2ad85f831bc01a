"""UAV placement stage: SCA over the horizontal position at fixed height.

Variables ``v = (qx, qy, S_br, S_rd)`` where the S's are upper bounds on the
squared distances to the controller and the device.  Distances enter the
SINRs only through the free-space gains ``beta0^2 / S``, and the squared
distances are replaced by their (global) first-order under-estimators, so
each subproblem is convex in ``v``.  The direct-link DEP ``eps1`` does not
depend on the position and enters the objective as a constant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fbl
from .config import Geometry, SolverSettings, SystemParams
from .dep import BlocklengthPair, LogComponents, log_components
from .errors import Infeasible, NumericalFailure, RegionViolation, SingularityError
from .link import LinkState, PowerTriple, link_from_distances
from .power import branch_is_capacity_limited, check_region, direct_terms
from .sca import DcObjective, DepTerm, Fractional, UavReliabilityConstraint, run_sca, scaled, taylor_linear

QX, QY, SB, SR = range(4)
NVAR = 4
EXTRA_COLUMNS = ("qx", "qy", "s_br", "s_rd")


@dataclass(frozen=True)
class LocationScaState:
    qx: float
    qy: float
    s_br: float
    s_rd: float
    iteration: int = 0

    @classmethod
    def tight(cls, qx, qy, geom: Geometry, iteration=0):
        q = np.array([qx, qy, geom.uav[2]])
        return cls(float(qx), float(qy), float(np.sum((q - geom.controller) ** 2)), float(np.sum((q - geom.device) ** 2)), iteration)

    def as_vector(self):
        return np.array([self.qx, self.qy, self.s_br, self.s_rd], dtype=float)


def distance_linearizations(state_prev: LocationScaState, geom: Geometry):
    """First-order under-estimators of the two squared distances.

    Returns two callbacks ``v -> (value, gradient, hessian)`` for
    ``L_b(q) - S_br <= 0`` and ``L_d(q) - S_rd <= 0`` where
    ``L_x(q) = |q_t - x|^2 + 2 (q_t - x)^T (q - q_t)``.
    """
    qt = np.array([state_prev.qx, state_prev.qy, geom.uav[2]])
    out = []
    for point, si in ((geom.controller, SB), (geom.device, SR)):
        diff = qt - point
        base = float(diff @ diff)
        g_xy = 2.0 * diff[:2]

        def c(v, base=base, g_xy=g_xy, si=si):
            v = np.asarray(v, float)
            lin = base + float(g_xy @ (v[:2] - qt[:2]))
            g = np.zeros(NVAR)
            g[:2] = g_xy
            g[si] = -1.0
            return lin - v[si], g, np.zeros((NVAR, NVAR))

        out.append(c)
    return out


def sinr_partials(pw: PowerTriple, params: SystemParams, s_br: float, s_rd: float) -> dict:
    """Derivatives of the relay-path SINRs with respect to the squared distances."""
    if not (s_br > 0 and s_rd > 0):
        raise SingularityError(f"squared distances must be positive, got {s_br}, {s_rd}")
    b0, n0, nd = params.beta0_sq, params.noise_bs, params.noise_dev
    return {
        "gamma2": -pw.p2 * b0 / (n0 * s_br ** 2),
        "gamma3": -pw.pu * b0 / (nd * s_rd ** 2),
        "gamma_s1": -pw.p1 * b0 * n0 / (pw.p2 * b0 + n0 * s_br) ** 2,
        "gamma_fail": -pw.p2 * b0 * n0 / (pw.p1 * b0 + n0 * s_br) ** 2,
    }


def sinr_of_distances(pw: PowerTriple, params: SystemParams, s_br: float, s_rd: float) -> dict:
    b0, n0, nd = params.beta0_sq, params.noise_bs, params.noise_dev
    return {
        "gamma2": pw.p2 * b0 / (n0 * s_br),
        "gamma3": pw.pu * b0 / (nd * s_rd),
        "gamma_s1": pw.p1 * b0 / (pw.p2 * b0 + n0 * s_br),
        "gamma_fail": pw.p2 * b0 / (pw.p1 * b0 + n0 * s_br),
    }


@dataclass(frozen=True)
class LocationTerms:
    eps2: DepTerm
    eps2_fail: DepTerm
    eps12: DepTerm
    eps3: DepTerm

    def named(self):
        return {"eps2": self.eps2, "eps2_fail": self.eps2_fail, "eps12": self.eps12, "eps3": self.eps3}


def location_terms(pw, m: BlocklengthPair, params: SystemParams, s_br_t, n=NVAR, i_br=SB, i_rd=SR) -> LocationTerms:
    """DEP terms as functions of the squared-distance slacks."""
    b0, n0, nd = params.beta0_sq, params.noise_bs, params.noise_dev
    mp, m3, d = m.m_p1, m.m_p2, params.payload_bits
    b = Fractional.build
    g_fail_t = sinr_of_distances(pw, params, s_br_t, 1.0)["gamma_fail"]
    frozen = branch_is_capacity_limited(g_fail_t, mp, d)
    return LocationTerms(
        DepTerm(b(n, (pw.p2 * b0, {}), (0.0, {i_br: n0})), mp, d),
        DepTerm(None if frozen else b(n, (pw.p2 * b0, {}), (pw.p1 * b0, {i_br: n0})), mp, d, frozen=frozen),
        DepTerm(b(n, (pw.p1 * b0, {}), (pw.p2 * b0, {i_br: n0})), mp, d),
        DepTerm(b(n, (pw.pu * b0, {}), (0.0, {i_rd: nd})), m3, d),
    )


def location_gradients(state_prev: LocationScaState, pw: PowerTriple, m: BlocklengthPair, params: SystemParams):
    """Taylor surrogates over ``(S_br, S_rd)`` anchored at ``state_prev``.

    Returns callables ``v -> (value, gradient)`` for ``eps2``, ``eps12_sq``,
    ``eps2dd_sq`` and ``eps3dd_sq`` (same meaning as in the power stage).
    """
    if not (state_prev.s_br > 0 and state_prev.s_rd > 0):
        raise SingularityError("zero distance slack")
    terms = location_terms(pw, m, params, state_prev.s_br, n=2, i_br=0, i_rd=1)
    v_t = np.array([state_prev.s_br, state_prev.s_rd])
    for name, t in terms.named().items():
        if t.frozen:
            continue
        bad = fbl.region_violations(fbl.FblPoint(t.sinr(v_t), t.blocklength, params.payload_bits))
        if bad:
            raise RegionViolation(name, bad)
    t2, tf, t12, t3 = (t(v_t) for t in (terms.eps2, terms.eps2_fail, terms.eps12, terms.eps3))
    dd_val = tf.value - t2.value
    dd_grad = tf.grad - t2.grad

    def eps2dd_sq(v):
        return dd_val ** 2 + 2 * dd_val * float(dd_grad @ (np.asarray(v, float) - v_t)), 2 * dd_val * dd_grad

    return {
        "eps2": taylor_linear([t2], v_t),
        "eps12_sq": taylor_linear([t12], v_t, squared=True),
        "eps2dd_sq": eps2dd_sq,
        "eps3dd_sq": taylor_linear([t3, t12], v_t, squared=True),
    }


def region_distance_bounds(pw: PowerTriple, m: BlocklengthPair, params: SystemParams, frozen_fail: bool):
    """Largest squared distances keeping every relay-path SINR inside the region."""
    b0, n0, nd = params.beta0_sq, params.noise_bs, params.noise_dev
    g_p = fbl.region_min_gamma(m.m_p1, params.payload_bits)
    g_3 = fbl.region_min_gamma(m.m_p2, params.payload_bits)
    s_br = min(pw.p2 * b0 / (n0 * g_p), (pw.p1 * b0 / g_p - pw.p2 * b0) / n0)
    if not frozen_fail:
        s_br = min(s_br, (pw.p2 * b0 / g_p - pw.p1 * b0) / n0)
    s_rd = pw.pu * b0 / (nd * g_3)
    return s_br, s_rd


@dataclass(frozen=True)
class LocationEval:
    point: tuple
    link: LinkState
    logs: LogComponents
    feasible: bool
    violation: float

    @property
    def log_obj(self):
        return self.logs.obj


def evaluate_position(q, pw, m, params, geom: Geometry, gain_bd_sq, tol_feas) -> LocationEval:
    qx, qy = float(q[0]), float(q[1])
    st = LocationScaState.tight(qx, qy, geom)
    if st.s_br <= 0 or st.s_rd <= 0:
        raise NumericalFailure("UAV on top of a ground node")
    link = link_from_distances(st.s_br, st.s_rd, params, gain_bd_sq)
    lc = log_components(link, pw, m, params)
    span_x = max(params.x_max - params.x_min, 1.0)
    span_y = max(params.y_max - params.y_min, 1.0)
    viol = max(
        (math.exp(lc.bar_uav) - params.eps_uav_max) / params.eps_uav_max,
        (params.x_min - qx) / span_x,
        (qx - params.x_max) / span_x,
        (params.y_min - qy) / span_y,
        (qy - params.y_max) / span_y,
    )
    ok = viol <= tol_feas
    if ok:
        try:
            check_region(direct_terms(pw, link, m, params), pw.as_array(), m, params)
        except RegionViolation:
            ok = False
    return LocationEval((qx, qy), link, lc, ok, viol)


class _Stage:
    def __init__(self, ev: LocationEval, pw, m, params, geom, log_eps1, q_bounds, split):
        qx, qy = ev.point
        st = LocationScaState.tight(qx, qy, geom)
        self.v_t = v_t = st.as_vector()
        self.terms = location_terms(pw, m, params, st.s_br)
        h2 = geom.uav[2] ** 2
        sb_max, sr_max = region_distance_bounds(pw, m, params, self.terms.eps2_fail.frozen)
        (x_lo, x_hi), (y_lo, y_hi) = q_bounds
        self.lb = np.array([x_lo, y_lo, h2, h2])
        self.ub = np.array([x_hi, y_hi, max(sb_max, v_t[SB]), max(sr_max, v_t[SR])])
        lin = distance_linearizations(st, geom)
        self.constraints = [_normalised(lin[0], v_t[SB]), _normalised(lin[1], v_t[SR])]
        self.constraints.append(UavReliabilityConstraint(self.terms.eps2, self.terms.eps12, self.terms.eps2_fail, v_t, params.eps_uav_max))
        self.objective = DcObjective(None, [self.terms.eps12, self.terms.eps3], v_t, log_a_const=log_eps1, gap_b=split)
        self.scale = np.maximum(np.abs(v_t), 1.0)

    def program(self):
        from . import inner

        s = self.scale
        return inner.SmoothProgram(NVAR, scaled(self.objective, s), [scaled(c, s) for c in self.constraints], self.lb / s, self.ub / s)

    def anchor(self):
        return self.v_t / self.scale

    def start(self):
        x = self.anchor()
        x[[SB, SR]] *= 1.0 + 1e-4
        return x

    def point(self, x):
        v = x * self.scale
        return (v[QX], v[QY])

    def surrogate_log(self, x):
        try:
            return self.objective.log_value(x * self.scale)
        except NumericalFailure:
            return math.nan


def _normalised(cb, scale):
    def c(v):
        val, g, h = cb(v)
        return val / scale, g / scale, h / scale

    return c


def solve_location_stage(
    start: LocationScaState | tuple,
    pw: PowerTriple,
    m: BlocklengthPair,
    params: SystemParams,
    geom: Geometry,
    gain_bd_sq: float,
    sca_tol: float = 1e-6,
    sca_max_iter: int = 30,
    settings: SolverSettings | None = None,
    q_bounds=None,
    dc_split: bool = False,
):
    """Iterate the placement subproblem from a feasible start.

    ``q_bounds`` overrides the horizontal box as ``((x_lo, x_hi), (y_lo, y_hi))``;
    equal ends pin a coordinate.  ``dc_split=True`` keeps the linearised
    square of the relay-path error in the objective (a looser majoriser);
    by default the convex product ``eps1 (eps3 + eps12)`` is used as is.
    Returns ``(LocationScaState, ScaTrace)``.
    """
    settings = settings or SolverSettings()
    q0 = (start.qx, start.qy) if isinstance(start, LocationScaState) else tuple(start)
    if q_bounds is None:
        q_bounds = ((params.x_min, params.x_max), (params.y_min, params.y_max))
    ev0 = evaluate_position(q0, pw, m, params, geom, gain_bd_sq, 0.0)
    check_region(direct_terms(pw, ev0.link, m, params), pw.as_array(), m, params)
    if not ev0.feasible:
        raise Infeasible(f"location-stage start violates a constraint (normalised violation {ev0.violation:.3g})")
    # eps1 depends only on the direct link and the powers
    log_eps1 = ev0.logs.eps1

    def row(ev, it, sur, prev):
        st = LocationScaState.tight(*ev.point, geom)
        return dict(
            objective_true=fbl.from_log(ev.log_obj),
            objective_surrogate=fbl.from_log(sur),
            eps_bar_uav=math.exp(ev.logs.bar_uav),
            max_violation=max(ev.violation, 0.0),
            step_norm=float(math.hypot(ev.point[0] - prev.point[0], ev.point[1] - prev.point[1])),
            log10_objective=ev.log_obj / math.log(10),
            qx=st.qx,
            qy=st.qy,
            s_br=st.s_br,
            s_rd=st.s_rd,
        )

    def evaluate(q):
        return evaluate_position(q, pw, m, params, geom, gain_bd_sq, 0.0)

    final, trace = run_sca(
        ev0,
        lambda ev: _Stage(ev, pw, m, params, geom, log_eps1, q_bounds, dc_split),
        evaluate,
        row,
        settings,
        sca_tol,
        sca_max_iter,
        EXTRA_COLUMNS,
    )
    return LocationScaState.tight(*final.point, geom, trace.iterations), trace
