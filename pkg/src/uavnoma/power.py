"""Power-allocation stage: SCA over (p1, p2, pu) with SINR slacks.

Variables ``v = (p1, p2, mu_tilde, mu_prime, mu_one, pu, zeta', zeta~, zeta'')``.
The mu's are lower bounds on the SINRs of the first SIC step, of s2 under
failed SIC and of the device in phase 1; the zeta's bound the matching
interference-plus-noise terms from above.  Each SCA iteration solves one
smooth program with :mod:`uavnoma.inner` and accepts the step only if the
true objective does not increase.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fbl, inner
from .config import SolverSettings, SystemParams
from .dep import BlocklengthPair, LogComponents, log_components
from .errors import Infeasible, NumericalFailure, RegionViolation
from .link import LinkState, PowerTriple, all_sinrs
from .sca import DcObjective, DepTerm, Fractional, UavReliabilityConstraint, run_sca, scaled, taylor_linear

P1, P2, MUT, MUP, MU1, PU, ZP, ZT, ZTT = range(9)
NVAR = 9


@dataclass(frozen=True)
class PowerScaState:
    p1: float
    p2: float
    pu: float
    mu_tilde: float
    mu_prime: float
    mu_one: float
    zeta_prime: float
    zeta_tilde: float
    zeta_dprime: float
    iteration: int = 0

    @classmethod
    def tight(cls, pw: PowerTriple, link: LinkState, params: SystemParams, iteration=0):
        """Slacks at their tight values for the powers ``pw``."""
        s = all_sinrs(link, pw, params)
        n = params.noise_bs
        return cls(
            pw.p1, pw.p2, pw.pu,
            s.gamma_s1, s.gamma_fail, s.gamma1,
            pw.p1 * link.gain_br_sq + n,
            pw.p2 * link.gain_br_sq + n,
            pw.p2 * link.gain_bd_sq + n,
            iteration,
        )

    @classmethod
    def from_vector(cls, v, iteration=0):
        v = [max(float(x), 0.0) for x in v]
        return cls(v[P1], v[P2], v[PU], v[MUT], v[MUP], v[MU1], v[ZP], v[ZT], v[ZTT], iteration)

    def as_vector(self):
        v = np.zeros(NVAR)
        v[[P1, P2, PU, MUT, MUP, MU1, ZP, ZT, ZTT]] = (
            self.p1, self.p2, self.pu, self.mu_tilde, self.mu_prime, self.mu_one,
            self.zeta_prime, self.zeta_tilde, self.zeta_dprime,
        )
        return v

    @property
    def powers(self) -> PowerTriple:
        return PowerTriple(self.p1, self.p2, self.pu)


def energy_constraint(state, m: BlocklengthPair, params: SystemParams) -> float:
    """Signed energy violation ``m'(p1+p2) + pu m3 - E_tot`` (<= 0 feasible)."""
    return m.m_p1 * (state.p1 + state.p2) + state.pu * m.m_p2 - params.e_tot


def branch_is_capacity_limited(gamma_fail, m_prime, payload_bits):
    """True when ``eps2'`` sits on its constant branch (rate above capacity)."""
    return payload_bits / m_prime > fbl.capacity(gamma_fail)


# ---------------------------------------------------------------- terms


@dataclass(frozen=True)
class StageTerms:
    eps1: DepTerm
    eps2: DepTerm
    eps2_fail: DepTerm
    eps12: DepTerm
    eps3: DepTerm

    def named(self):
        return {"eps1": self.eps1, "eps2": self.eps2, "eps2_fail": self.eps2_fail, "eps12": self.eps12, "eps3": self.eps3}


def slack_terms(state: PowerScaState, link: LinkState, m: BlocklengthPair, params: SystemParams) -> StageTerms:
    """DEP terms over the 9 slack-form variables, branch frozen at ``state``."""
    mp, m3, d = m.m_p1, m.m_p2, params.payload_bits
    lin = Fractional.linear
    frozen = branch_is_capacity_limited(state.mu_prime, mp, d)
    return StageTerms(
        DepTerm(lin(NVAR, MU1), mp, d),
        DepTerm(lin(NVAR, P2, link.gain_br_sq / params.noise_bs), mp, d),
        DepTerm(None if frozen else lin(NVAR, MUP), mp, d, frozen=frozen),
        DepTerm(lin(NVAR, MUT), mp, d),
        DepTerm(lin(NVAR, PU, link.gain_rd_sq / params.noise_dev), m3, d),
    )


def direct_terms(pw: PowerTriple, link: LinkState, m: BlocklengthPair, params: SystemParams) -> StageTerms:
    """DEP terms over ``(p1, p2, pu)`` with the SINRs written out explicitly."""
    mp, m3, d = m.m_p1, m.m_p2, params.payload_bits
    hbr, hbd, n0 = link.gain_br_sq, link.gain_bd_sq, params.noise_bs
    s = all_sinrs(link, pw, params)
    frozen = branch_is_capacity_limited(s.gamma_fail, mp, d)
    b = Fractional.build
    return StageTerms(
        DepTerm(b(3, (0, {0: hbd}), (n0, {1: hbd})), mp, d),
        DepTerm(Fractional.linear(3, 1, hbr / n0), mp, d),
        DepTerm(None if frozen else b(3, (0, {1: hbr}), (n0, {0: hbr})), mp, d, frozen=frozen),
        DepTerm(b(3, (0, {0: hbr}), (n0, {1: hbr})), mp, d),
        DepTerm(Fractional.linear(3, 2, link.gain_rd_sq / params.noise_dev), m3, d),
    )


def check_region(terms: StageTerms, v, m: BlocklengthPair, params: SystemParams):
    """Raise :class:`RegionViolation` for the first linearised term outside the region."""
    for name, term in terms.named().items():
        if term.frozen:
            continue
        g = term.sinr(v)
        bad = fbl.region_violations(fbl.FblPoint(g, term.blocklength, params.payload_bits)) if g > 0 else ["gamma <= 0"]
        if bad:
            raise RegionViolation(name, bad)


def taylor_surrogates(state_prev: PowerScaState, link: LinkState, m: BlocklengthPair, params: SystemParams):
    """First-order expansions about ``state_prev`` over the slack-form vector.

    Returns a dict of callables ``v -> (value, gradient)`` for ``eps2``,
    ``eps12_sq``, ``eps2dd_sq`` (``(eps2' - eps2)^2``), ``eps3dd_sq``
    (``(eps3 + eps12)^2``) and ``eps1_sq``.
    """
    terms = slack_terms(state_prev, link, m, params)
    v_t = state_prev.as_vector()
    check_region(terms, v_t, m, params)
    t2, tf, t12, t3, t1 = (t(v_t) for t in (terms.eps2, terms.eps2_fail, terms.eps12, terms.eps3, terms.eps1))
    dd_val = tf.value - t2.value
    dd_grad = tf.grad - t2.grad

    def eps2dd_sq(v):
        return dd_val ** 2 + 2 * dd_val * float(dd_grad @ (np.asarray(v, float) - v_t)), 2 * dd_val * dd_grad

    return {
        "eps2": taylor_linear([t2], v_t),
        "eps12_sq": taylor_linear([t12], v_t, squared=True),
        "eps2dd_sq": eps2dd_sq,
        "eps3dd_sq": taylor_linear([t3, t12], v_t, squared=True),
        "eps1_sq": taylor_linear([t1], v_t, squared=True),
    }


def relaxed_product(mu, zeta, mu_t, zeta_t, u=1.0):
    """Convex over-estimate of ``mu * zeta`` that is exact at the anchor.

    ``u = 1`` is the plain ``1/2 (mu + zeta)^2 - L[mu^2 + zeta^2]`` form;
    other positive ``u`` rescale zeta first, which keeps both quadratic
    penalties of the same size when mu and zeta differ by many decades.
    """
    return mu * zeta + 0.5 * u * (mu - mu_t) ** 2 + 0.5 / u * (zeta - zeta_t) ** 2


_PAIRS = (
    # (mu index, zeta index, gain attr on the numerator, numerator power)
    (MUP, ZP, "gain_br_sq", P2),
    (MUT, ZT, "gain_br_sq", P1),
    (MU1, ZTT, "gain_bd_sq", P1),
)
_ZETA = (
    # zeta >= p * gain + noise
    (ZP, "gain_br_sq", P1),
    (ZT, "gain_br_sq", P2),
    (ZTT, "gain_bd_sq", P2),
)


def bilinear_relaxations(state_prev: PowerScaState, link: LinkState, params: SystemParams, balanced=True):
    """Relaxed SINR-product constraints plus the linear zeta bounds.

    Returns six callbacks ``v -> (value, gradient, hessian)`` with value <= 0
    meaning feasible, in physical units (W).  The first three are
    ``relaxed_product(mu, zeta) - p * gain``.
    """
    v_t = state_prev.as_vector()
    out = []
    for mi, zi, gname, pi in _PAIRS:
        mu_t, z_t = v_t[mi], v_t[zi]
        u = z_t / mu_t if (balanced and mu_t > 0 and z_t > 0) else 1.0
        gain = getattr(link, gname)

        def c(v, mi=mi, zi=zi, pi=pi, mu_t=mu_t, z_t=z_t, u=u, gain=gain):
            mu, z = v[mi], v[zi]
            g = np.zeros(NVAR)
            g[mi] = z + u * (mu - mu_t)
            g[zi] = mu + (z - z_t) / u
            g[pi] = -gain
            h = np.zeros((NVAR, NVAR))
            h[mi, mi] = u
            h[zi, zi] = 1.0 / u
            h[mi, zi] = h[zi, mi] = 1.0
            return relaxed_product(mu, z, mu_t, z_t, u) - gain * v[pi], g, h

        out.append(c)
    for zi, gname, pi in _ZETA:
        gain = getattr(link, gname)

        def c(v, zi=zi, pi=pi, gain=gain):
            g = np.zeros(NVAR)
            g[pi] = gain
            g[zi] = -1.0
            return gain * v[pi] + params.noise_bs - v[zi], g, np.zeros((NVAR, NVAR))

        out.append(c)
    return out


# ---------------------------------------------------------------- stage


def _normalised(cb, scale):
    def c(v):
        val, g, h = cb(v)
        return val / scale, g / scale, h / scale

    return c


def _linear(coef, const, scale):
    coef = np.asarray(coef, float) / scale
    const = const / scale
    zero = np.zeros((len(coef), len(coef)))
    return lambda v: (float(coef @ v) + const, coef, zero)


@dataclass(frozen=True)
class PowerEval:
    """True quantities at a power point."""

    point: PowerTriple
    logs: LogComponents
    feasible: bool
    violation: float

    @property
    def log_obj(self):
        return self.logs.obj


def evaluate_powers(pw: PowerTriple, link, m, params, tol_feas) -> PowerEval:
    """True objective and constraint status; ``feasible`` also requires the region."""
    lc = log_components(link, pw, m, params)
    eps_bar = math.exp(lc.bar_uav)
    viol = max(
        (pw.p1 + pw.p2 - params.p_max) / params.p_max,
        energy_constraint(pw, m, params) / max(params.e_tot, 1e-300),
        (eps_bar - params.eps_uav_max) / params.eps_uav_max,
    )
    ok = viol <= tol_feas and _region_ok(pw, link, m, params)
    return PowerEval(pw, lc, ok, viol)


def _region_ok(pw, link, m, params):
    try:
        check_region(direct_terms(pw, link, m, params), pw.as_array(), m, params)
    except RegionViolation:
        return False
    return True


class _Stage:
    """One SCA subproblem over the 9 slack-form variables."""

    def __init__(self, pw, link, m, params, fix_pu):
        d = params.payload_bits
        mp, m3 = m.m_p1, m.m_p2
        g_min_p = fbl.region_min_gamma(mp, d)
        g_min_3 = fbl.region_min_gamma(m3, d)
        n0 = params.noise_bs
        st = PowerScaState.tight(pw, link, params)
        self.v_t = v_t = st.as_vector()
        self.terms = slack_terms(st, link, m, params)
        lb = np.zeros(NVAR)
        ub = np.full(NVAR, np.inf)
        # the convexity region as simple bounds on the linearised arguments
        lb[P2] = g_min_p * n0 / link.gain_br_sq
        lb[PU] = g_min_3 * params.noise_dev / link.gain_rd_sq
        lb[MUT] = lb[MU1] = g_min_p
        if not self.terms.eps2_fail.frozen:
            lb[MUP] = g_min_p
        lb[[ZP, ZT, ZTT]] = n0
        ub[[P1, P2]] = params.p_max
        if fix_pu:
            lb[PU] = ub[PU] = v_t[PU]
        coef_pow = np.zeros(NVAR)
        coef_pow[[P1, P2]] = 1.0
        coef_en = np.zeros(NVAR)
        coef_en[[P1, P2]] = mp
        coef_en[PU] = m3
        cons = [
            _linear(coef_pow, -params.p_max, params.p_max),
            _linear(coef_en, -params.e_tot, max(params.e_tot, 1e-300)),
        ]
        rel = bilinear_relaxations(st, link, params)
        for k, (mi, zi, _, _) in enumerate(_PAIRS):
            cons.append(_normalised(rel[k], max(v_t[mi] * v_t[zi], 1e-300)))
        for k, (zi, _, _) in enumerate(_ZETA):
            cons.append(_normalised(rel[3 + k], v_t[zi]))
        self.objective = DcObjective([self.terms.eps1], [self.terms.eps12, self.terms.eps3], v_t)
        cons.append(UavReliabilityConstraint(self.terms.eps2, self.terms.eps12, self.terms.eps2_fail, v_t, params.eps_uav_max))
        self.constraints = cons
        self.lb, self.ub = lb, ub
        # solve in variables of order one
        self.scale = np.maximum(np.abs(v_t), 1e-12)
        self.scale[[ZP, ZT, ZTT]] = np.maximum(v_t[[ZP, ZT, ZTT]], n0)

    def program(self):
        s = self.scale
        return inner.SmoothProgram(
            NVAR,
            scaled(self.objective, s),
            [scaled(c, s) for c in self.constraints],
            self.lb / s,
            self.ub / s,
        )

    def _perturbed(self, delta):
        x = self.v_t / self.scale
        # far enough from the relaxed constraints for a well-centred barrier start
        x[[MUT, MUP, MU1]] *= 1.0 - delta
        x[[ZP, ZT, ZTT]] *= 1.0 + 0.1 * delta
        # stage outputs sit on the energy / power budgets; step inside them, staying above the region bounds
        lb = self.lb / self.scale
        for i in (P1, P2, PU):
            if lb[i] < x[i] and not (self.lb[i] == self.ub[i]):
                x[i] = max(x[i] * (1.0 - 1e-2 * delta), 0.5 * (x[i] + lb[i]))
        return x

    def start(self):
        """A strictly interior scaled start near the anchor.

        The perturbation shrinks until every constraint is strictly
        satisfied (a binding reliability constraint tolerates only a small
        one); if none works the inner solver's phase 1 takes over.
        """
        prog = self.program()
        for delta in (1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9):
            x = self._perturbed(delta)
            try:
                if all(float(c(x)[0]) < 0 for c in prog.constraints):
                    return x
            except NumericalFailure:
                continue
        return self._perturbed(1e-3)

    def anchor(self):
        return self.v_t / self.scale

    def point(self, x) -> PowerTriple:
        v = x * self.scale
        return PowerTriple(max(v[P1], 0.0), max(v[P2], 0.0), max(v[PU], 0.0))

    def surrogate_log(self, x):
        try:
            return self.objective.log_value(x * self.scale)
        except NumericalFailure:
            return math.nan


def _max_violation_state(state: PowerScaState, link, m, params):
    """Largest normalised violation of the original slack constraints."""
    v = state.as_vector()
    worst = 0.0
    for mi, zi, gname, pi in _PAIRS:
        a = getattr(link, gname) * v[pi]
        worst = max(worst, (v[mi] * v[zi] - a) / max(a, 1e-300))
    for zi, gname, pi in _ZETA:
        need = getattr(link, gname) * v[pi] + params.noise_bs
        worst = max(worst, (need - v[zi]) / need)
    return worst


def solve_power_stage(
    start: PowerScaState | PowerTriple,
    link: LinkState,
    m: BlocklengthPair,
    params: SystemParams,
    sca_tol: float = 1e-6,
    sca_max_iter: int = 30,
    settings: SolverSettings | None = None,
    fix_pu: bool = False,
):
    """Iterate the power subproblem from a feasible start.

    Returns ``(PowerScaState, ScaTrace)``; the state carries tight slacks for
    its powers.  ``fix_pu`` pins the relay power.  Raises
    :class:`RegionViolation` if the start lies outside the convexity region
    and :class:`Infeasible` if it violates a constraint.
    """
    settings = settings or SolverSettings()
    pw = start.powers if isinstance(start, PowerScaState) else start
    check_region(direct_terms(pw, link, m, params), pw.as_array(), m, params)
    ev0 = evaluate_powers(pw, link, m, params, 0.0)
    if not ev0.feasible:
        raise Infeasible(f"power-stage start violates a constraint (normalised violation {ev0.violation:.3g})")

    def row(ev, it, sur, prev):
        st = PowerScaState.tight(ev.point, link, params, it)
        return dict(
            objective_true=fbl.from_log(ev.log_obj),
            objective_surrogate=fbl.from_log(sur),
            eps_bar_uav=math.exp(ev.logs.bar_uav),
            max_violation=max(ev.violation, _max_violation_state(st, link, m, params), 0.0),
            step_norm=float(np.linalg.norm(ev.point.as_array() - prev.point.as_array())),
            log10_objective=ev.log_obj / math.log(10),
        )

    final, trace = run_sca(
        ev0,
        lambda ev: _Stage(ev.point, link, m, params, fix_pu),
        lambda pw: evaluate_powers(pw, link, m, params, 0.0),
        row,
        settings,
        sca_tol,
        sca_max_iter,
    )
    return PowerScaState.tight(final.point, link, params, trace.iterations), trace
