"""Closed-form integral and MGF primitives.

Everything here is a pure function of its arguments.  The workhorse is
:func:`exp_vs_gamma`: the integral of exp(-d*z) against a Gamma(b, n)
density equals (1 + b*d)^(-n).  Powers are evaluated as
exp(-n * log1p(b*d)) so large shapes do not overflow.
"""

from __future__ import annotations

import math

import numpy as np

from .data_model import (
    ArnoldStrauss,
    BivariateNamed,
    CheriyanRamabhadran,
    Freund,
    GeneralizedMVGamma,
    SpecError,
)

_EULER_GAMMA = 0.5772156649015328606


class DomainError(ValueError):
    """Argument outside the operation's mathematical domain."""


def exp_vs_gamma(d: float, b: float, n: float) -> float:
    """Integral of exp(-d*z) against a Gamma(scale=b, shape=n) density.

    Equals (1 + b*d)^(-n) for d >= 0.
    """
    if d < 0:
        raise DomainError(f"d must be non-negative, got {d}")
    return math.exp(-n * math.log1p(b * d))


def translated_factor(d: float, b: float, n: float, eps: float) -> float:
    """Integral of exp(-d*z) against a Gamma density translated right by eps.

    The translation contributes the exponential factor exp(-d*eps); the rest
    is :func:`exp_vs_gamma`.
    """
    if eps < 0:
        raise DomainError(f"eps must be non-negative, got {eps}")
    if d < 0:
        raise DomainError(f"d must be non-negative, got {d}")
    return math.exp(-d * eps - n * math.log1p(b * d))


def mixture_factor(
    d: float, components: list[tuple[float, float, float]], eps: float
) -> float:
    """Weighted sum of translated-Gamma factors.

    ``components`` is a list of (weight, b, n) triples whose weights must sum
    to one (tolerance 1e-12).
    """
    total_w = math.fsum(w for w, _, _ in components)
    if abs(total_w - 1.0) > 1e-12:
        raise SpecError(f"mixture weights sum to {total_w}, not 1")
    return math.fsum(w * translated_factor(d, b, n, eps) for w, b, n in components)


def mgf_gmv_gamma(t, params: GeneralizedMVGamma) -> float:
    """MGF of the generalized multivariate Gamma at the point ``t``.

    Product of shared-factor terms (1 - sum_p loadings[p][m]*t_p)^(-theta0_m)
    and idiosyncratic terms (1 - lam_p*t_p)^(-theta_p).  Exists when every
    shared-factor dot product is < 1 and every lam_p*t_p < 1; both hold
    automatically when all t_p <= 0.
    """
    t = np.asarray(t, dtype=float)
    if t.shape != (params.P,):
        raise DomainError(f"t must have length P={params.P}")
    log_val = 0.0
    load = np.asarray(params.loadings, dtype=float)  # P x M
    for m in range(params.M):
        s = float(load[:, m] @ t)
        if s >= 1.0:
            raise DomainError(
                f"MGF existence violated: sum_p loadings[p][{m}]*t_p = {s} >= 1"
            )
        log_val += -params.theta0[m] * math.log1p(-s)
    for p in range(params.P):
        s = params.lam[p] * t[p]
        if s >= 1.0:
            raise DomainError(f"MGF existence violated: lam[{p}]*t[{p}] = {s} >= 1")
        log_val += -params.theta[p] * math.log1p(-s)
    return math.exp(log_val)


def gmv_gamma_covariance(params: GeneralizedMVGamma) -> np.ndarray:
    """Covariance matrix of the generalized multivariate Gamma."""
    load = np.asarray(params.loadings, dtype=float)
    th0 = np.asarray(params.theta0, dtype=float)
    cov = (load * th0) @ load.T
    lam = np.asarray(params.lam, dtype=float)
    th = np.asarray(params.theta, dtype=float)
    cov[np.diag_indices_from(cov)] += lam**2 * th
    return cov


def gmv_gamma_correlation(params: GeneralizedMVGamma) -> np.ndarray:
    cov = gmv_gamma_covariance(params)
    sd = np.sqrt(np.diag(cov))
    return cov / np.outer(sd, sd)


# ---------------------------------------------------------------------------
# Exponential integral on the negative axis
# ---------------------------------------------------------------------------

def expint_ei(z: float) -> float:
    """Exponential integral Ei(z) for z < 0.

    Ei(z) = -int_{-z}^inf exp(-t)/t dt.  Uses the power series
    gamma + ln|z| + sum z^k/(k k!) for |z| < 6 and the Lentz continued
    fraction for E1(-z) otherwise.
    """
    if z >= 0:
        raise DomainError("expint_ei is defined here only for z < 0")
    x = -z  # x > 0, Ei(z) = -E1(x)
    if x < 6.0:
        total = _EULER_GAMMA + math.log(x)
        term = 1.0
        s = 0.0
        for k in range(1, 200):
            term *= z / k
            s += term / k
            if abs(term / k) < 1e-18 * max(1.0, abs(s)):
                break
        return total + s
    # E1(x) = exp(-x) * CF, CF = 1/(x+1- 1/(x+3- 4/(x+5- 9/(x+7- ...))))
    # evaluated by modified Lentz iteration.
    tiny = 1e-300
    b0 = x + 1.0
    c = 1.0 / tiny
    dd = 1.0 / b0
    h = dd
    for i in range(1, 200):
        a = -(i * i)
        b0 += 2.0
        dd = 1.0 / (a * dd + b0)
        c = b0 + a / c
        if c == 0.0:
            c = tiny
        delta = c * dd
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return -math.exp(-x) * h


def _e1(x: float) -> float:
    """E1(x) = -Ei(-x) for x > 0."""
    return -expint_ei(-x)


# ---------------------------------------------------------------------------
# Bivariate named families
# ---------------------------------------------------------------------------

def mgf_bivariate_named(t, spec: BivariateNamed) -> float:
    """Closed-form MGF of a named bivariate family at t = (t1, t2)."""
    t1, t2 = float(t[0]), float(t[1])
    if isinstance(spec, CheriyanRamabhadran):
        if t1 + t2 >= 1.0 or t1 >= 1.0 or t2 >= 1.0:
            raise DomainError("Cheriyan-Ramabhadran MGF needs t1+t2 < 1 and t_i < 1")
        return math.exp(
            -spec.theta0 * math.log1p(-(t1 + t2))
            - spec.theta1 * math.log1p(-t1)
            - spec.theta2 * math.log1p(-t2)
        )
    if isinstance(spec, Freund):
        if t1 >= spec.alpha1p or t2 >= spec.alpha2p:
            raise DomainError("Freund MGF needs t_p < alpha_p'")
        if t1 + t2 >= spec.alpha1 + spec.alpha2:
            raise DomainError("Freund MGF needs t1+t2 < alpha1+alpha2")
        return (
            1.0
            / (spec.alpha1 + spec.alpha2 - t1 - t2)
            * (
                spec.alpha1p * spec.alpha2 / (spec.alpha1p - t1)
                + spec.alpha1 * spec.alpha2p / (spec.alpha2p - t2)
            )
        )
    if isinstance(spec, ArnoldStrauss):
        if t1 >= spec.lam1 or t2 >= spec.lam2:
            raise DomainError("Arnold-Strauss MGF needs t_p < lam_p")
        # Normalization is pinned by M(0,0) = 1, so the MGF is the ratio of
        # exp(a) E1(a) at a(t) and at a(0).
        a_t = (spec.lam1 - t1) * (spec.lam2 - t2) / spec.lam12
        a_0 = spec.lam1 * spec.lam2 / spec.lam12
        return math.exp(a_t - a_0) * _e1(a_t) / _e1(a_0)
    raise SpecError(f"unsupported bivariate family {type(spec).__name__}")


def arnold_strauss_norm(spec: ArnoldStrauss) -> float:
    """Normalization constant of the Arnold-Strauss density."""
    a_0 = spec.lam1 * spec.lam2 / spec.lam12
    return spec.lam12 / (math.exp(a_0) * _e1(a_0))
