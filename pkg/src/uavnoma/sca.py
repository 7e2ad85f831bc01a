"""Shared machinery for the successive convex approximation stages.

A :class:`DepTerm` is one DEP ``eps = Q(f(gamma(v), m, D))`` where the SINR
``gamma(v)`` is a linear-fractional map of the stage variables.  Both SCA
stages build the same two smooth functions out of such terms:

* the difference-of-convex objective ``1/2 (a + b)^2 - 1/2 (L[a^2] + L[b^2])``
  with the subtracted squares replaced by first-order expansions;
* the surrogate UAV reliability constraint
  ``eps2 + 1/2 (eps12 + eps2' - L[eps2])^2 - 1/2 (L[eps12^2] + L[eps2''^2]) <= eps_max``.

The expressions are evaluated in rearranged forms (product plus non-negative
expansion gaps) so that nothing cancels catastrophically when the DEPs sit
many decades below one.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import fbl
from .errors import DomainError, InvalidInput, NumericalFailure, SingularityError

# evaluation failures that just mean a trial point is unusable
_TRIAL_ERRORS = (NumericalFailure, InvalidInput, SingularityError, DomainError)

LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class Fractional:
    """``gamma(v) = (a0 + a.v) / (b0 + b.v)``."""

    a0: float
    a: np.ndarray
    b0: float
    b: np.ndarray

    @classmethod
    def linear(cls, n, idx, k=1.0):
        a = np.zeros(n)
        a[idx] = k
        return cls(0.0, a, 1.0, np.zeros(n))

    @classmethod
    def build(cls, n, num=(0.0, {}), den=(1.0, {})):
        a = np.zeros(n)
        b = np.zeros(n)
        for i, c in num[1].items():
            a[i] = c
        for i, c in den[1].items():
            b[i] = c
        return cls(float(num[0]), a, float(den[0]), b)

    def __call__(self, v):
        num = self.a0 + self.a @ v
        den = self.b0 + self.b @ v
        if not den > 0:
            raise NumericalFailure("SINR denominator not positive")
        g = num / den
        grad = (self.a - g * self.b) / den
        hess = -(np.outer(grad, self.b) + np.outer(self.b, grad)) / den
        return g, grad, hess

    def value(self, v):
        return (self.a0 + self.a @ v) / (self.b0 + self.b @ v)


@dataclass(frozen=True)
class TermValue:
    log: float
    g_rel: np.ndarray  # grad eps / eps
    h_rel: np.ndarray  # hess eps / eps

    @property
    def value(self):
        return math.exp(self.log) if self.log > -745 else 0.0

    @property
    def grad(self):
        return self.value * self.g_rel

    @property
    def hess(self):
        return self.value * self.h_rel


@dataclass(frozen=True)
class DepTerm:
    """A DEP as a function of the stage variables; ``frozen`` pins it to 1."""

    gamma: Fractional | None
    blocklength: int
    payload_bits: int
    frozen: bool = False

    def __call__(self, v) -> TermValue:
        n = len(v)
        if self.frozen:
            return TermValue(0.0, np.zeros(n), np.zeros((n, n)))
        g, dg, hg = self.gamma(v)
        if not g > 0:
            raise NumericalFailure(f"SINR {g} not positive")
        try:
            lq, r1, r2 = fbl.log_dep_derivs(g, self.blocklength, self.payload_bits)
        except SingularityError as exc:
            raise NumericalFailure(str(exc)) from exc
        return TermValue(lq, r1 * dg, r2 * np.outer(dg, dg) + r1 * hg)

    def sinr(self, v):
        return None if self.frozen else self.gamma.value(v)


def _weight(log_rel):
    if log_rel > 700.0:
        raise NumericalFailure("term exceeds its anchor scale by more than e^700")
    return math.exp(log_rel) if log_rel > -745 else 0.0


def _sum_scaled(vals, lc):
    """Sum of exp(log - lc) weighted values, gradients and Hessians."""
    x = 0.0
    g = 0.0
    h = 0.0
    for tv in vals:
        w = _weight(tv.log - lc)
        x += w
        g = g + w * tv.g_rel
        h = h + w * tv.h_rel
    return x, g, h


def _log_sum(vals):
    return float(np.logaddexp.reduce([tv.log for tv in vals])) if vals else -math.inf


class _Anchored:
    """A sum of terms with its value and gradient frozen at the anchor."""

    def __init__(self, terms, v_t):
        self.terms = list(terms)
        self.vt = np.array(v_t, float)
        self.at = [t(self.vt) for t in self.terms]
        self.log_t = _log_sum(self.at)

    def scaled(self, v, lc):
        vals = [t(v) for t in self.terms]
        x, g, h = _sum_scaled(vals, lc)
        xt, gt, _ = _sum_scaled(self.at, lc)
        d = np.asarray(v, float) - self.vt
        # x - x_t - grad_t . d, term by term
        dx = 0.0
        rem = 0.0
        for tv, tt in zip(vals, self.at):
            wt = _weight(tt.log - lc)
            if wt == 0.0:
                w = _weight(tv.log - lc)
                dx += w
                rem += w
                continue
            if tv.log - tt.log > 700.0:
                raise NumericalFailure("term exceeds its anchor value by more than e^700")
            e = math.expm1(tv.log - tt.log)
            dx += wt * e
            rem += wt * (e - float(tt.g_rel @ d))
        return x, g, h, xt, gt, dx, rem


class DcObjective:
    """``a*b + gap(a^2)/2 + gap(b^2)/2`` with ``gap(x^2) = x^2 - L[x^2]``.

    The value handed to the inner solver is divided by the anchor product
    ``a_t * b_t``, so it equals one at the anchor and stays convex whenever
    the terms are.  ``log_space=True`` returns its logarithm instead.
    ``a`` is either a list of terms or a constant given as ``log_a_const``.
    With a constant ``a`` the product ``a*b`` is already convex and
    ``gap_b=False`` drops the (then unnecessary) expansion gap of ``b^2``.
    ``balanced=True`` weights both gaps by one in anchor-normalised units
    (the split ``(k a + b / k)^2`` with ``k^2 = b_t / a_t``); ``False`` uses
    the plain split, whose gap weights are ``a_t / b_t`` and its inverse.
    """

    def __init__(self, a_terms, b_terms, v_t, log_a_const=None, log_space=False, gap_b=True, balanced=True):
        self.const_a = log_a_const is not None
        self.gap_b = gap_b
        self.log_a_const = log_a_const
        self.log_space = log_space
        self.b = _Anchored(b_terms, v_t)
        self.a = None if self.const_a else _Anchored(a_terms, v_t)
        self.la = log_a_const if self.const_a else self.a.log_t
        self.lb = self.b.log_t
        if not (math.isfinite(self.la) and math.isfinite(self.lb)):
            raise NumericalFailure("objective factor is zero at the anchor")
        # weight of the gap terms relative to the product; the unbalanced split
        # (a_t / b_t) overflows once the factors differ by hundreds of decades
        self.r = 1.0 if balanced else math.exp(min(max(self.la - self.lb, -575.0), 575.0))

    def parts(self, v):
        with np.errstate(over="raise", invalid="raise"):
            try:
                return self._parts(v)
            except FloatingPointError as exc:
                raise NumericalFailure(f"surrogate objective overflow: {exc}") from exc

    def _parts(self, v):
        n = len(v)
        b, gb, hb, _, gbt, db, rb = self.b.scaled(v, self.lb)
        gb = np.broadcast_to(gb, (n,)) if np.isscalar(gb) else gb
        hb = np.broadcast_to(hb, (n, n)) if np.isscalar(hb) else hb
        gbt = np.broadcast_to(gbt, (n,)) if np.isscalar(gbt) else gbt
        if self.const_a:
            a, ga, ha, gat, da, ra = 1.0, np.zeros(n), np.zeros((n, n)), np.zeros(n), 0.0, 0.0
        else:
            a, ga, ha, _, gat, da, ra = self.a.scaled(v, self.la)
            ga = np.broadcast_to(ga, (n,)) if np.isscalar(ga) else ga
            ha = np.broadcast_to(ha, (n, n)) if np.isscalar(ha) else ha
            gat = np.broadcast_to(gat, (n,)) if np.isscalar(gat) else gat
        r = self.r
        s = a * b + 0.5 * r * (da * da + 2.0 * ra)
        gs = b * ga + a * gb + r * (a * ga - gat)
        hs = np.outer(ga, gb) + np.outer(gb, ga) + b * ha + a * hb + r * (np.outer(ga, ga) + a * ha)
        if self.gap_b:
            s += 0.5 / r * (db * db + 2.0 * rb)
            gs = gs + (b * gb - gbt) / r
            hs = hs + (np.outer(gb, gb) + b * hb) / r
        return s, gs, hs

    def __call__(self, v):
        s, gs, hs = self.parts(v)
        if not math.isfinite(s):
            raise NumericalFailure("surrogate objective overflow")
        if not self.log_space:
            return s, gs, hs
        s_eff = s + LOG_FLOOR
        if not s_eff > 0:
            raise NumericalFailure("surrogate objective not positive")
        gf = gs / s_eff
        return math.log(s_eff), gf, hs / s_eff - np.outer(gf, gf)

    def log_value(self, v):
        """Natural log of the surrogate on the probability scale."""
        s, _, _ = self.parts(v)
        return math.log(s) + self.la + self.lb if s > 0 else -math.inf


class UavReliabilityConstraint:
    """Normalised surrogate ``(G(v) - eps_max) / eps_max <= 0``."""

    def __init__(self, eps2: DepTerm, eps12: DepTerm, eps2_fail: DepTerm, v_t, eps_max):
        self.e2, self.e12, self.ef = eps2, eps12, eps2_fail
        self.vt = np.array(v_t, float)
        self.eps_max = eps_max
        self.t2 = eps2(self.vt)
        self.t12 = eps12(self.vt)
        self.tf = eps2_fail(self.vt)

    def raw(self, v):
        v = np.asarray(v, float)
        d = v - self.vt
        t2, t12, tf = self.e2(v), self.e12(v), self.ef(v)
        e2, g2, h2 = t2.value, t2.grad, t2.hess
        e12, g12, h12 = t12.value, t12.grad, t12.hess
        ef, gf, hf = tf.value, tf.grad, tf.hess
        e2t, g2t = self.t2.value, self.t2.grad
        e12t, g12t = self.t12.value, self.t12.grad
        eft, gft = self.tf.value, self.tf.grad

        dfail = _diff(tf, self.tf)
        d12 = _diff(t12, self.t12)
        dstar_t = eft - e2t
        dstar = ef - (e2t + g2t @ d)
        delta = dfail - g2t @ d
        gap12 = d12 * d12 + 2.0 * e12t * (d12 - g12t @ d)
        gapf = delta * delta + 2.0 * dstar_t * (dfail - gft @ d)
        val = e2 + e12 * dstar + 0.5 * gap12 + 0.5 * gapf

        w = gf - g2t
        grad = g2 + g12 * dstar + e12 * w + (d12 * g12 + e12t * (g12 - g12t)) + (delta * w + dstar_t * (gf - gft))
        hess = (
            h2 + h12 * dstar + np.outer(g12, w) + np.outer(w, g12) + e12 * hf
            + np.outer(g12, g12) + d12 * h12 + e12t * h12
            + np.outer(w, w) + delta * hf + dstar_t * hf
        )
        return val, grad, hess

    def __call__(self, v):
        val, grad, hess = self.raw(v)
        m = self.eps_max
        return (val - m) / m, grad / m, hess / m


def _diff(tv: TermValue, tt: TermValue):
    """tv.value - tt.value without losing the small difference."""
    if tt.log < -745:
        return tv.value - tt.value
    return math.exp(tt.log) * math.expm1(tv.log - tt.log)


def taylor_linear(term_values_t, v_t, squared=False):
    """First-order expansion of a sum of terms (or its square) at ``v_t``.

    Returns a callable ``v -> (value, gradient)``.
    """
    x_t = sum(tv.value for tv in term_values_t)
    g_t = sum((tv.grad for tv in term_values_t), np.zeros(len(v_t)))
    if squared:
        g_t = 2.0 * x_t * g_t
        x_t = x_t * x_t
    vt = np.array(v_t, float)

    def lin(v):
        return x_t + float(g_t @ (np.asarray(v, float) - vt)), g_t.copy()

    return lin


def scaled(cb, s):
    """Re-express a callback in variables ``x = v / s``."""
    s = np.asarray(s, float)
    ss = np.outer(s, s)

    def wrapped(x):
        out = cb(s * np.asarray(x, float))
        if len(out) > 2 and out[2] is not None:
            return out[0], out[1] * s, out[2] * ss
        return out[0], out[1] * s

    return wrapped


TRACE_COLUMNS = ("iteration", "objective_true", "objective_surrogate", "eps_bar_uav", "max_violation", "step_norm")


@dataclass
class ScaTrace:
    """Per-iteration records of one SCA run; row 0 is the start point.

    ``objective_true`` is the true device objective at the iterate (not the
    surrogate); ``log10_objective`` repeats it in log10 so that values below
    the double range stay readable.
    """

    extra_columns: tuple = ()
    rows: list = field(default_factory=list)
    status: str = "converged"
    iterations: int = 0

    @property
    def columns(self):
        return TRACE_COLUMNS + ("log10_objective",) + tuple(self.extra_columns)

    def append(self, **row):
        missing = set(self.columns) - set(row)
        if missing:
            raise ValueError(f"trace row missing {sorted(missing)}")
        if not math.isfinite(row["log10_objective"]):
            raise ValueError("true objective must be finite at every recorded iterate")
        self.rows.append({k: row[k] for k in self.columns})

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return [r[name] for r in self.rows]

    def is_monotone(self):
        lo = self.column("log10_objective")
        return all(b <= a for a, b in zip(lo, lo[1:]))

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([format_number(r[c]) for c in self.columns])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def format_number(x):
    """Full-precision text for CSV output (17 significant digits)."""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, np.longdouble) and x != 0 and abs(x) < np.finfo(float).tiny:
        return np.format_float_scientific(x, precision=16, unique=False)
    return f"{float(x):.17g}"


def _extrapolate(evaluate, stage, x0, x, ev, max_doublings=30):
    """Keep doubling an accepted full step while the true objective keeps falling."""
    step = x - x0
    for j in range(1, max_doublings + 1):
        xj = x0 + 2.0 ** j * step
        try:
            ej = evaluate(stage.point(xj))
        except _TRIAL_ERRORS:
            break
        if not (ej.feasible and ej.log_obj < ev.log_obj):
            break
        ev, x = ej, xj
    return ev, x


def run_sca(start_eval, build, evaluate, row, settings, sca_tol, sca_max_iter, extra_columns=(), extrapolate=True):
    """Generic safeguarded SCA loop shared by the continuous stages.

    ``build(ev)`` returns a stage object with ``program()``, ``start()``,
    ``anchor()`` (scaled anchor vector), ``point(x)`` and ``surrogate_log(x)``;
    ``evaluate(point)`` returns an evaluation with ``log_obj``, ``feasible``
    (true constraints and convexity region) and ``point``; ``row(ev, it,
    sur_log, prev)`` returns the trace fields other than the iteration.

    A candidate is accepted only if the true objective does not increase;
    otherwise the step is halved toward the anchor up to ten times.  A full
    step that is accepted is doubled while the true objective keeps falling
    and the point stays feasible (``extrapolate``): the product surrogates
    only admit small moves of a steep factor, so plain steps crawl.
    """
    from . import inner

    trace = ScaTrace(tuple(extra_columns))
    cur = start_eval
    trace.append(iteration=0, **row(cur, 0, cur.log_obj, cur))
    status = "iteration-limit"
    it = 0
    while it < sca_max_iter:
        it += 1
        try:
            stage = build(cur)
            rep = inner.solve(stage.program(), stage.start(), settings.tol_kkt_sca, settings.tol_feas, settings.inner_max_iter)
        except NumericalFailure:
            status = "stalled"
            break
        if rep.status is inner.Status.INFEASIBLE:
            status = "infeasible-detected"
            break
        x0 = stage.anchor()
        accepted = None
        for k in range(11):
            x = x0 + 0.5 ** k * (rep.point - x0)
            try:
                ev = evaluate(stage.point(x))
            except _TRIAL_ERRORS:
                continue
            if ev.feasible and ev.log_obj <= cur.log_obj:
                accepted = (ev, x)
                break
        if accepted is None:
            status = "converged"
            break
        ev, x = accepted
        if extrapolate and k == 0:
            ev, x = _extrapolate(evaluate, stage, x0, x, ev)
        rel = -math.expm1(ev.log_obj - cur.log_obj)
        prev, cur = cur, ev
        trace.append(iteration=it, **row(cur, it, stage.surrogate_log(x), prev))
        if rel <= sca_tol:
            status = "converged"
            break
    trace.status = status
    trace.iterations = it
    return cur, trace
