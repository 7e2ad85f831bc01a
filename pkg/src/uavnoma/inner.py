"""Small dense smooth constrained solver.

Log-barrier interior-point method: damped Newton on the barrier function,
barrier weight multiplied by BARRIER_GROWTH per stage, a phase-1 problem when the start
is not strictly feasible.  Callbacks return ``(value, gradient)`` or
``(value, gradient, hessian)``; missing Hessians are built from forward
differences of the gradient.  When the Newton matrix is not positive definite
even after regularisation the step falls back to the (scaled) negative
gradient of the barrier function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog, nnls

from .errors import NumericalFailure

BARRIER_GROWTH = 20.0
# beyond this weight the barrier terms are below rounding of the objective
T_MAX = 1e18

Callback = Callable[[np.ndarray], tuple]


class Status(str, Enum):
    CONVERGED = "converged"
    ITERATION_LIMIT = "iteration-limit"
    INFEASIBLE = "infeasible-detected"


@dataclass
class SmoothProgram:
    dimension: int
    objective: Callback
    constraints: Sequence[Callback] = ()
    lower_bounds: np.ndarray | None = None
    upper_bounds: np.ndarray | None = None

    def __post_init__(self):
        n = self.dimension
        if n < 1:
            raise ValueError("dimension must be >= 1")
        lb = np.full(n, -np.inf) if self.lower_bounds is None else np.asarray(self.lower_bounds, float)
        ub = np.full(n, np.inf) if self.upper_bounds is None else np.asarray(self.upper_bounds, float)
        if lb.shape != (n,) or ub.shape != (n,):
            raise ValueError("bounds must be n-vectors")
        if np.any(lb > ub):
            raise ValueError("lower bound exceeds upper bound")
        self.lower_bounds, self.upper_bounds = lb, ub
        self.constraints = list(self.constraints)


@dataclass
class SolveReport:
    point: np.ndarray
    objective_value: float
    kkt_residual: float
    constraint_violation: float
    iterations: int
    status: Status
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bound_multipliers: tuple = (None, None)
    history: list = field(default_factory=list)

    @property
    def converged(self):
        return self.status is Status.CONVERGED


def _call(cb, x, n, index):
    out = cb(x)
    val = float(out[0])
    grad = np.asarray(out[1], dtype=float).reshape(n)
    hess = None if len(out) < 3 or out[2] is None else np.asarray(out[2], dtype=float).reshape(n, n)
    if not math.isfinite(val) or not np.all(np.isfinite(grad)) or (hess is not None and not np.all(np.isfinite(hess))):
        what = "objective" if index is None else f"constraint {index}"
        raise NumericalFailure(f"{what} returned a non-finite value at {x}", index)
    return val, grad, hess


def _fd_hessian(cb, x, g0, n, free, index):
    h = np.zeros((n, n))
    for j in np.flatnonzero(free):
        step = 1e-7 * max(1.0, abs(x[j]))
        xp = x.copy()
        xp[j] += step
        _, gp, _ = _call(cb, xp, n, index)
        h[:, j] = (gp - g0) / step
    return 0.5 * (h + h.T)


class _Problem:
    """Barrier bookkeeping for one program; fixed variables never move."""

    def __init__(self, prog: SmoothProgram):
        self.prog = prog
        self.n = prog.dimension
        lb, ub = prog.lower_bounds, prog.upper_bounds
        self.free = lb < ub
        self.has_lb = self.free & np.isfinite(lb)
        self.has_ub = self.free & np.isfinite(ub)
        self.lb, self.ub = lb, ub
        self.nb = len(prog.constraints) + int(self.has_lb.sum()) + int(self.has_ub.sum())

    def values(self, x, need_hess=True):
        n, free = self.n, self.free
        f, gf, hf = _call(self.prog.objective, x, n, None)
        if need_hess and hf is None:
            hf = _fd_hessian(self.prog.objective, x, gf, n, free, None)
        cons = []
        for i, cb in enumerate(self.prog.constraints):
            g, gg, hg = _call(cb, x, n, i)
            if need_hess and hg is None:
                hg = _fd_hessian(cb, x, gg, n, free, i)
            cons.append((g, gg, hg))
        return (f, gf, hf), cons

    def interior(self, x):
        return np.all(x[self.has_lb] > self.lb[self.has_lb]) and np.all(x[self.has_ub] < self.ub[self.has_ub])

    def barrier(self, t, x, vals, need_hess=True):
        (f, gf, hf), cons = vals
        need_hess = need_hess and hf is not None and all(c[2] is not None for c in cons)
        phi = t * f
        grad = t * gf
        hess = t * hf if need_hess else None
        for g, gg, hg in cons:
            if not g < 0:
                return math.inf, None, None
            phi -= math.log(-g)
            grad = grad + gg / (-g)
            if need_hess:
                hess = hess + np.outer(gg, gg) / (g * g) + hg / (-g)
        dl = x - self.lb
        du = self.ub - x
        il, iu = self.has_lb, self.has_ub
        phi -= np.sum(np.log(dl[il])) + np.sum(np.log(du[iu]))
        grad = grad.copy()
        grad[il] -= 1.0 / dl[il]
        grad[iu] += 1.0 / du[iu]
        if need_hess:
            hess = hess.copy()
            hess[il, il] += 1.0 / dl[il] ** 2
            hess[iu, iu] += 1.0 / du[iu] ** 2
        grad[~self.free] = 0.0
        return phi, grad, hess

    def multipliers(self, t, x, cons):
        lam = np.array([1.0 / (t * -g) for g, _, _ in cons])
        zl = np.zeros(self.n)
        zu = np.zeros(self.n)
        zl[self.has_lb] = 1.0 / (t * (x - self.lb)[self.has_lb])
        zu[self.has_ub] = 1.0 / (t * (self.ub - x)[self.has_ub])
        return lam, zl, zu


def kkt_residual(prog: SmoothProgram, x, lam, zl=None, zu=None) -> float:
    """Stationarity / complementarity / dual-feasibility residual from raw callbacks."""
    n = prog.dimension
    x = np.asarray(x, float)
    free = prog.lower_bounds < prog.upper_bounds
    _, gf, _ = _call(prog.objective, x, n, None)
    r = gf.copy()
    comp = 0.0
    lam = np.asarray(lam, float)
    for i, cb in enumerate(prog.constraints):
        g, gg, _ = _call(cb, x, n, i)
        r += lam[i] * gg
        comp = max(comp, abs(lam[i] * min(g, 0.0)), max(g, 0.0))
    zl = np.zeros(n) if zl is None else np.asarray(zl, float)
    zu = np.zeros(n) if zu is None else np.asarray(zu, float)
    r += -zl + zu
    il, iu = zl > 0, zu > 0
    comp = max(
        comp,
        float(np.max(zl[il] * (x - prog.lower_bounds)[il], initial=0.0)),
        float(np.max(zu[iu] * (prog.upper_bounds - x)[iu], initial=0.0)),
    )
    dual = max(0.0, -float(np.min(lam, initial=0.0)), -float(np.min(zl)), -float(np.min(zu)))
    return max(float(np.max(np.abs(r[free]), initial=0.0)), comp, dual)


def max_violation(prog: SmoothProgram, x) -> float:
    v = 0.0
    for i, cb in enumerate(prog.constraints):
        v = max(v, float(_call(cb, x, prog.dimension, i)[0]))
    v = max(v, float(np.max(prog.lower_bounds - x, initial=0.0)), float(np.max(x - prog.upper_bounds, initial=0.0)))
    return v


def _push_interior(prob: _Problem, x):
    x = np.clip(np.asarray(x, float).copy(), prob.lb, prob.ub)
    lb, ub = prob.lb, prob.ub
    for j in np.flatnonzero(prob.free):
        width = ub[j] - lb[j]
        pad = 1e-8 * (width if math.isfinite(width) else max(1.0, abs(x[j])))
        if prob.has_lb[j] and x[j] <= lb[j]:
            x[j] = lb[j] + pad
        if prob.has_ub[j] and x[j] >= ub[j]:
            x[j] = ub[j] - pad
    return x


def _newton_direction(hess, grad, free):
    idx = np.flatnonzero(free)
    h = hess[np.ix_(idx, idx)]
    g = grad[idx]
    d = np.zeros_like(grad)
    scale = max(1e-300, float(np.max(np.abs(np.diag(h))))) if h.size else 1.0
    tau = 0.0
    for _ in range(12):
        try:
            c = np.linalg.cholesky(h + tau * np.eye(len(idx)))
            y = np.linalg.solve(c, -g)
            d[idx] = np.linalg.solve(c.T, y)
            return d, True
        except np.linalg.LinAlgError:
            tau = 1e-10 * scale if tau == 0.0 else tau * 10.0
    d[idx] = -g / scale
    return d, False


def _center(prob, t, x, vals, budget, tol, stop=None):
    """Damped Newton on the barrier function at weight t."""
    it = 0
    phi, grad, hess = prob.barrier(t, x, vals)
    while it < budget:
        if stop is not None and stop(x, vals, None):
            break
        d, _ = _newton_direction(hess, grad, prob.free)
        dec = -float(grad @ d)
        if not dec > 0 or 0.5 * dec <= tol:
            break
        it += 1
        alpha = 1.0
        lo_mask = prob.has_lb & (d < 0)
        up_mask = prob.has_ub & (d > 0)
        if lo_mask.any():
            alpha = min(alpha, 0.99 * float(np.min((prob.lb - x)[lo_mask] / d[lo_mask])))
        if up_mask.any():
            alpha = min(alpha, 0.99 * float(np.min((prob.ub - x)[up_mask] / d[up_mask])))
        # inside the quadratic-convergence zone a feasible full step needs no sufficient-decrease test
        quadratic = dec < 0.1
        accepted = False
        for _ in range(60):
            xn = x + alpha * d
            xn[~prob.free] = x[~prob.free]
            try:
                vn = prob.values(xn, need_hess=False)
                phin, _, _ = prob.barrier(t, xn, vn, need_hess=False)
            except NumericalFailure:
                phin = math.inf
            if math.isfinite(phin) and (quadratic or phin <= phi - 1e-4 * alpha * dec):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        x = xn
        vals = prob.values(x)
        phi, grad, hess = prob.barrier(t, x, vals)
        if quadratic and alpha == 1.0 and dec < 1e-3 * tol ** 0.5:
            break
    return x, vals, it


def _barrier_solve(prob: _Problem, x, tol_kkt, max_iter, stop=None):
    """Barrier stages from a strictly interior x; returns the last centred point."""
    x_start = x.copy()
    vals = prob.values(x)
    f0 = vals[0][0]
    _, gb, _ = prob.barrier(0.0, x, vals)
    gn = float(np.linalg.norm(vals[0][1][prob.free]))
    t = 1.0 if gn == 0.0 or prob.nb == 0 else float(np.clip(np.linalg.norm(gb) / gn, 1e-6, 1e6))
    iters = 0
    history = []
    while True:
        x, vals, k = _center(prob, t, x, vals, max_iter - iters, 1e-10, stop)
        iters += k
        lam, zl, zu = prob.multipliers(t, x, vals[1])
        if stop is not None:
            why = stop(x, vals, t)
            if why:
                history.append(vals[0][0])
                return x, vals, t, iters, history, why
        if not history and vals[0][0] > f0 and t < 1e12 and iters < max_iter:
            # first centred point lies uphill of the start: restart with a heavier objective weight
            t *= BARRIER_GROWTH
            x = x_start.copy()
            vals = prob.values(x)
            continue
        history.append(vals[0][0])
        if _best_kkt(prob, x, vals, lam, zl, zu)[0] <= tol_kkt or (prob.nb == 0 and k == 0):
            return x, vals, t, iters, history, "converged"
        # every barrier stage costs at least one unit of budget so a stuck centring step cannot loop
        iters += k == 0
        if iters >= max_iter or t >= T_MAX:
            return x, vals, t, iters, history, "limit"
        t *= BARRIER_GROWTH


def _refine_multipliers(prob, x, vals, lam, zl, zu):
    """Least-squares multipliers on the barrier's active-set estimate.

    Barrier multipliers carry O(1/t) stationarity noise once the slacks are
    near machine precision; a non-negative fit on the same active set is exact
    up to rounding.
    """
    (_, gf, _), cons = vals
    free = prob.free
    cols, kinds = [], []
    scale = max([1e-300] + [float(v) for v in lam] + list(zl) + list(zu))
    for i, (g, gg, _) in enumerate(cons):
        if lam[i] >= 1e-6 * scale:
            cols.append(gg[free])
            kinds.append(("c", i))
    for j in np.flatnonzero(prob.has_lb):
        if zl[j] >= 1e-6 * scale:
            e = np.zeros(prob.n)
            e[j] = -1.0
            cols.append(e[free])
            kinds.append(("l", j))
    for j in np.flatnonzero(prob.has_ub):
        if zu[j] >= 1e-6 * scale:
            e = np.zeros(prob.n)
            e[j] = 1.0
            cols.append(e[free])
            kinds.append(("u", j))
    if not cols:
        return lam * 0.0, zl * 0.0, zu * 0.0
    a = np.array(cols).T
    coef, _ = nnls(a, -gf[free])
    lam2, zl2, zu2 = np.zeros_like(lam), np.zeros_like(zl), np.zeros_like(zu)
    for c, (kind, i) in zip(coef, kinds):
        {"c": lam2, "l": zl2, "u": zu2}[kind][i] = c
    return lam2, zl2, zu2


def _best_kkt(prob, x, vals, lam, zl, zu):
    base = kkt_from_vals(prob, x, vals, lam, zl, zu)
    try:
        ref = _refine_multipliers(prob, x, vals, lam, zl, zu)
    except (ValueError, RuntimeError, np.linalg.LinAlgError):
        return base, (lam, zl, zu)
    rk = kkt_from_vals(prob, x, vals, *ref)
    return (rk, ref) if rk < base else (base, (lam, zl, zu))


def kkt_from_vals(prob, x, vals, lam, zl, zu):
    (_, gf, _), cons = vals
    r = gf.copy()
    for li, (g, gg, _) in zip(lam, cons):
        r += li * gg
    r += -zl + zu
    comp = 0.0
    if len(lam):
        comp = float(np.max(np.abs(lam * np.array([c[0] for c in cons]))))
    il, iu = prob.has_lb, prob.has_ub
    comp = max(
        comp,
        float(np.max(zl[il] * (x - prob.lb)[il], initial=0.0)),
        float(np.max(zu[iu] * (prob.ub - x)[iu], initial=0.0)),
    )
    return max(float(np.max(np.abs(r[prob.free]), initial=0.0)), comp)


def _phase1(prog: SmoothProgram, x0, tol_feas, max_iter):
    """Find a strictly feasible point by minimising the largest violation."""
    n = prog.dimension
    cons = prog.constraints

    def obj(z):
        g = np.zeros(n + 1)
        g[-1] = 1.0
        return z[-1], g, np.zeros((n + 1, n + 1))

    def lifted(cb, i):
        def c(z):
            out = cb(z[:-1])
            v, gg = out[0], np.asarray(out[1], float)
            h = None
            if len(out) > 2 and out[2] is not None:
                h = np.zeros((n + 1, n + 1))
                h[:n, :n] = out[2]
            return v - z[-1], np.append(gg, -1.0), h

        return c

    gmax = max(float(_call(cb, x0, n, i)[0]) for i, cb in enumerate(cons))
    s0 = gmax + max(1.0, abs(gmax))
    p1 = SmoothProgram(
        n + 1,
        obj,
        [lifted(cb, i) for i, cb in enumerate(cons)],
        np.append(prog.lower_bounds, -np.inf),
        np.append(prog.upper_bounds, np.inf),
    )
    prob = _Problem(p1)
    z0 = np.append(x0, s0)

    def stop(z, vals, t):
        if z[-1] < 0 and all(v[0] + z[-1] < 0 for v in vals[1]):
            return "feasible"
        # centred point: s - (barrier terms)/t is a lower bound on the least violation
        if t is not None and z[-1] - prob.nb / t > tol_feas:
            return "infeasible"
        return None

    z, vals, _, iters, _, why = _barrier_solve(prob, z0, tol_feas, max_iter, stop)
    return z[:-1], why == "feasible", iters


def _strict_start(prob: _Problem, x):
    """Step from a boundary point along a direction that decreases every near-active constraint.

    The direction solves a small LP (a Mangasarian-Fromovitz direction);
    returns a strictly feasible interior point or None.
    """
    prog, n = prob.prog, prob.n
    vals = [_call(cb, x, n, i)[:2] for i, cb in enumerate(prog.constraints)]
    if not vals:
        return None
    g = np.array([v for v, _ in vals])
    free = np.flatnonzero(prob.free)
    near = np.flatnonzero(g > -1e-3 * max(1.0, float(np.max(np.abs(g)))))
    if not len(near) or not len(free):
        return None
    a = np.array([vals[i][1][free] for i in near])
    nrm = np.maximum(np.linalg.norm(a, axis=1), 1e-300)
    # minimise s  s.t.  a_i . d / |a_i| <= s,  |d| <= 1 (scaled by |x|)
    scale = np.maximum(np.abs(x[free]), 1e-12)
    k = len(free)
    a_ub = np.hstack([a * scale / nrm[:, None], -np.ones((len(near), 1))])
    bounds = [(-1.0, 1.0)] * k + [(None, None)]
    c = np.zeros(k + 1)
    c[-1] = 1.0
    try:
        res = linprog(c, A_ub=a_ub, b_ub=np.zeros(len(near)), bounds=bounds, method="highs")
    except (ValueError, RuntimeError):
        return None
    if res.status != 0 or not res.x[-1] < 0:
        return None
    d = np.zeros(n)
    d[free] = res.x[:k] * scale
    for step in 10.0 ** -np.arange(2, 13):
        xn = x + step * d
        if not prob.interior(xn):
            continue
        try:
            if all(float(_call(cb, xn, n, i)[0]) < 0 for i, cb in enumerate(prog.constraints)):
                return xn
        except NumericalFailure:
            continue
    return None


def solve(prog: SmoothProgram, start, tol_kkt=1e-8, tol_feas=1e-9, max_iter=200) -> SolveReport:
    """Minimise ``prog.objective`` subject to ``constraints <= 0`` and the box."""
    if tol_kkt <= 0 or tol_feas <= 0:
        raise ValueError("tolerances must be positive")
    prob = _Problem(prog)
    x0 = np.asarray(start, float).reshape(prog.dimension)
    x = _push_interior(prob, x0)
    n = prog.dimension
    cons_vals = [float(_call(cb, x, n, i)[0]) for i, cb in enumerate(prog.constraints)]
    f_start = float(_call(prog.objective, x0, n, None)[0])
    start_feasible = max_violation(prog, x0) <= tol_feas
    used = 0
    if cons_vals and max(cons_vals) >= 0:
        xs = _strict_start(prob, x)
        if xs is not None:
            x = xs
            cons_vals = [-1.0]
    if cons_vals and max(cons_vals) >= 0:
        x, ok, used = _phase1(prog, x, tol_feas, max_iter)
        if not ok:
            f, _, _ = _call(prog.objective, x, n, None)
            return SolveReport(x, f, math.inf, max_violation(prog, x), used, Status.INFEASIBLE)
    x, vals, t, iters, history, why = _barrier_solve(prob, x, tol_kkt, max(1, max_iter - used))
    iters += used
    lam, zl, zu = prob.multipliers(t, x, vals[1])
    _, (lam, zl, zu) = _best_kkt(prob, x, vals, lam, zl, zu)
    f = vals[0][0]
    viol = max_violation(prog, x)
    if start_feasible and f > f_start:
        x, f, viol = x0.copy(), f_start, max_violation(prog, x0)
        lam = np.zeros(len(prog.constraints))
        zl = zu = np.zeros(n)
    kkt = kkt_residual(prog, x, lam, zl, zu)
    status = Status.CONVERGED if (kkt <= tol_kkt and viol <= tol_feas) else Status.ITERATION_LIMIT
    return SolveReport(x, f, kkt, viol, iters, status, lam, (zl, zu), history)


def check_gradients(prog: SmoothProgram, point, step=1e-6) -> float:
    """Worst relative error between callback gradients and central differences."""
    x = np.asarray(point, float)
    n = prog.dimension
    worst = 0.0
    cbs = [prog.objective] + list(prog.constraints)
    for k, cb in enumerate(cbs):
        _, g, _ = _call(cb, x, n, None if k == 0 else k - 1)
        fd = np.zeros(n)
        for j in range(n):
            h = step * max(1.0, abs(x[j]))
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            fd[j] = (float(cb(xp)[0]) - float(cb(xm)[0])) / (2 * h)
        denom = max(float(np.max(np.abs(fd))), float(np.max(np.abs(g))), 1e-300)
        worst = max(worst, float(np.max(np.abs(fd - g))) / denom)
    return worst
