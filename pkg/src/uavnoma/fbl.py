"""Finite-blocklength primitives.

Gaussian tail function and its inverse, channel dispersion, the normal
approximation of the achievable rate, and the decoding error probability
(DEP) ``eps = Q(f(gamma, m, D))`` together with its derivatives.

The DEP values met in practice span hundreds of decades, so every quantity
has a log-domain twin (``log_q_func``, ``log_dep``) and the solvers work on
those.  ``q_func`` itself returns an ordinary float unless the value would
fall below the normal double range, in which case it is returned as a
``numpy.longdouble`` so that it stays strictly positive.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, erfcx

from .errors import DomainError, SingularityError

LOG2E = math.log2(math.e)
LN2 = math.log(2.0)
A_SQ = LOG2E ** 2

_SQRT2 = math.sqrt(2.0)
_LOG_HALF = math.log(0.5)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG_TINY = math.log(np.finfo(float).tiny)
_TAIL_SWITCH = 8.0

# Remark-type convexity region: eps <= 0.1
EPS_REGION_MAX = 0.1


@dataclass(frozen=True)
class FblPoint:
    gamma: float
    blocklength: int
    payload_bits: int

    def __post_init__(self):
        if not self.gamma >= 0.0:
            raise DomainError(f"gamma must be >= 0, got {self.gamma}")
        if self.blocklength < 1:
            raise DomainError(f"blocklength must be >= 1, got {self.blocklength}")
        if self.payload_bits < 1:
            raise DomainError(f"payload_bits must be >= 1, got {self.payload_bits}")

    @property
    def rate(self) -> float:
        return self.payload_bits / self.blocklength


def from_log(logp):
    """exp(logp), promoted to longdouble when a double would be subnormal."""
    if logp >= _LOG_TINY:
        return math.exp(logp)
    return np.exp(np.longdouble(logp))


def _log_q_scalar(x: float) -> float:
    if x <= 0.0:
        return math.log1p(-0.5 * math.erfc(-x / _SQRT2))
    if x < 25.0:
        return math.log(0.5 * math.erfc(x / _SQRT2))
    return math.log(0.5 * float(erfcx(x / _SQRT2))) - 0.5 * x * x


def log_q_func(x):
    """Natural log of the Gaussian tail probability, stable for any finite x.

    Accepts scalars or arrays.
    """
    if isinstance(x, (float, int)) or (isinstance(x, np.generic) and np.ndim(x) == 0):
        return _log_q_scalar(float(x))
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x > 0
    xp = x[pos]
    out[pos] = np.log(0.5 * erfcx(xp / _SQRT2)) - 0.5 * xp * xp
    xn = x[~pos]
    out[~pos] = np.log1p(-0.5 * erfc(-xn / _SQRT2))
    return out[()] if out.ndim == 0 else out


def q_func(x: float):
    """Gaussian tail probability ``Q(x) = erfc(x / sqrt(2)) / 2``."""
    x = float(x)
    if not math.isfinite(x):
        raise DomainError(f"q_func needs a finite argument, got {x}")
    if x <= _TAIL_SWITCH:
        return float(0.5 * erfc(x / _SQRT2))
    return from_log(float(log_q_func(x)))


def log_phi(x):
    return -0.5 * np.square(x) - _LOG_SQRT_2PI


def mills_hazard(x):
    """phi(x) / Q(x), the derivative scale of -log Q."""
    if isinstance(x, float):
        return math.exp(-0.5 * x * x - _LOG_SQRT_2PI - _log_q_scalar(x))
    return np.exp(log_phi(x) - log_q_func(x))


def q_inv(p: float, tol: float = 1e-12) -> float:
    """Inverse of ``q_func`` on (0, 1).

    Bracketed bisection on ``log_q_func`` followed by Newton polishing.
    """
    p = float(p)
    if not (0.0 < p < 1.0):
        raise DomainError(f"q_inv needs 0 < p < 1, got {p}")
    if p == 0.5:
        return 0.0
    target = math.log(p)
    lo, hi = -1.0, 1.0
    while float(log_q_func(lo)) < target:
        lo *= 2.0
    while float(log_q_func(hi)) > target:
        hi *= 2.0
    # log Q is decreasing
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(log_q_func(mid)) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-6 * max(1.0, abs(mid)):
            break
    x = 0.5 * (lo + hi)
    for _ in range(20):
        r = float(log_q_func(x)) - target
        step = r / float(mills_hazard(x))  # d/dx log Q = -hazard
        x_new = min(max(x + step, lo), hi)
        if abs(x_new - x) <= tol * max(1.0, abs(x)):
            x = x_new
            break
        x = x_new
    return x


def dispersion(gamma: float) -> float:
    """Channel dispersion ``a^2 (1 - (1+gamma)^-2)`` with ``a = log2(e)``."""
    if gamma < 0:
        raise DomainError(f"dispersion needs gamma >= 0, got {gamma}")
    w = 1.0 + gamma
    if gamma < 1.0:
        # no cancellation near zero
        return A_SQ * gamma * (2.0 + gamma) / (w * w)
    # monotone under rounding for large gamma
    return A_SQ * (1.0 - 1.0 / (w * w))


def capacity(gamma):
    return np.log1p(gamma) / LN2


def fbl_rate(p: FblPoint, eps: float) -> float:
    """Normal-approximation rate in bits per symbol at error probability eps."""
    if not (0.0 < eps < 1.0):
        raise DomainError(f"eps must lie in (0, 1), got {eps}")
    return float(capacity(p.gamma)) - q_inv(eps) * math.sqrt(dispersion(p.gamma) / p.blocklength)


def _f_core(gamma, m, d):
    g = np.asarray(gamma, dtype=float)
    w = 1.0 + g
    return np.sqrt(m) * w / np.sqrt(g * (2.0 + g)) * (np.log1p(g) - d * LN2 / m)


def f_arg(p: FblPoint) -> float:
    """DEP argument ``ln2 sqrt(m / (1-(1+g)^-2)) (log2(1+g) - D/m)``."""
    if p.gamma == 0.0:
        raise SingularityError("f_arg is singular at gamma = 0")
    return float(_f_core(p.gamma, p.blocklength, p.payload_bits))


def f_arg_array(gamma, m, d):
    """Vectorised ``f_arg``; gamma and m broadcast, gamma must be > 0."""
    return _f_core(gamma, np.asarray(m, dtype=float), float(d))


def dep(p: FblPoint):
    return q_func(f_arg(p))


def log_dep(p: FblPoint) -> float:
    return float(log_q_func(f_arg(p)))


def _f_derivs(gamma: float, m: float, d: float):
    """f, df/dgamma, d2f/dgamma2 at a scalar gamma > 0."""
    w = 1.0 + gamma
    r2 = gamma * (2.0 + gamma)  # w^2 - 1
    r = math.sqrt(r2)
    h = math.log1p(gamma) - d * LN2 / m
    sm = math.sqrt(m)
    g = w / r
    g1 = -1.0 / (r2 * r)
    g2 = 3.0 * w / (r2 * r2 * r)
    h1 = 1.0 / w
    h2 = -1.0 / (w * w)
    f = sm * g * h
    f1 = sm * (g1 * h + g * h1)
    f2 = sm * (g2 * h + 2.0 * g1 * h1 + g * h2)
    return f, f1, f2


def df_dgamma(p: FblPoint) -> float:
    """Derivative of ``f_arg`` with respect to gamma.

    ``sqrt(m) / ((1+g) sqrt(1-(1+g)^-2)) * (1 - ln2 (log2(1+g) - D/m) / ((1+g)^2 (1-(1+g)^-2)))``
    """
    if p.gamma == 0.0:
        raise SingularityError("df_dgamma is singular at gamma = 0")
    return _f_derivs(p.gamma, p.blocklength, p.payload_bits)[1]


def log_dep_derivs(gamma: float, m: float, d: float):
    """Return ``(log eps, eps'/eps, eps''/eps)`` with derivatives in gamma.

    The relative form keeps everything finite when eps itself underflows.
    """
    if gamma <= 0.0:
        raise SingularityError(f"DEP derivatives need gamma > 0, got {gamma}")
    f, f1, f2 = _f_derivs(gamma, m, d)
    lq = float(log_q_func(f))
    lam = float(mills_hazard(f))
    return lq, -lam * f1, lam * (f * f1 * f1 - f2)


def region_violations(p: FblPoint, eps: float | None = None) -> list[str]:
    """Names of the convexity-region conditions that ``p`` violates."""
    out = []
    g = p.gamma
    rate = p.rate
    if eps is None:
        eps = dep(p) if g > 0 else 1.0
    if not eps <= EPS_REGION_MAX:
        out.append(f"eps={float(eps):.3g} > {EPS_REGION_MAX}")
    if not g >= 1.0:
        out.append(f"gamma={g:.6g} < 1")
    if not float(capacity(g)) >= rate:
        out.append(f"log2(1+gamma)={float(capacity(g)):.6g} < D/m={rate:.6g}")
    thr = region_thresholds(rate)
    if not g >= thr:
        out.append(f"gamma={g:.6g} below curvature threshold {thr:.6g}")
    return out


def region_thresholds(rate: float) -> float:
    return max(1.0 / (5.0 * LN2 * rate), 8.0 / (45.0 * rate * rate * LN2 * LN2))


def convexity_region_ok(p: FblPoint) -> bool:
    return not region_violations(p)


def region_min_gamma(m: int, d: int) -> float:
    """Smallest gamma satisfying every convexity-region condition at (m, D).

    All four conditions are monotone in gamma, so the region is a ray.
    """
    rate = d / m
    lo = max(1.0, 2.0 ** rate - 1.0, region_thresholds(rate))
    target = q_inv(EPS_REGION_MAX)
    if float(_f_core(lo, m, d)) >= target:
        return lo
    hi = 2.0 * lo
    while float(_f_core(hi, m, d)) < target:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(_f_core(mid, m, d)) >= target:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-13 * hi:
            break
    return hi
