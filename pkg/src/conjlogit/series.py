"""Truncated series evaluation of the per-household marginal factors H_i.

Two equivalent evaluation routes exist for independent-Gamma priors: the
naive route enumerates k-tuples in the budget simplex directly, while the
grouped route reads a :class:`~conjlogit.diophantine.DioCache` of signed
solution counts and sums over the far smaller set of reachable r-tuples.
Both truncate over the same simplex k.1 <= R, so they agree to rounding.

The MGF route extends the grouped sum to any prior whose moment generating
function is available in closed form on the non-positive orthant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data_model import (
    BivariateNamed,
    Dataset,
    GammaMixture,
    GeneralizedMVGamma,
    Household,
    IndependentGamma,
    PointMassGamma,
    SpecError,
)
from .diophantine import DioCache, build_cache
from .gamma_kernels import mgf_bivariate_named, mgf_gmv_gamma


class TruncationFailure(RuntimeError):
    """A truncated H_i came out non-positive; the budget R is too small."""

    def __init__(self, household: str, value: float, parity_spread: float | None):
        self.household = household
        self.value = value
        self.parity_spread = parity_spread
        msg = f"household {household}: truncated H = {value} <= 0 (R too small)"
        if parity_spread is not None:
            msg += f"; parity spread {parity_spread:.3g}"
        super().__init__(msg)


@dataclass(frozen=True)
class SeriesConfig:
    R: int
    mode: str = "grouped"  # "naive" | "grouped"
    parity_check: bool = False

    def __post_init__(self):
        if self.R < 0:
            raise ValueError("R must be non-negative")
        if self.mode not in ("naive", "grouped"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class HouseholdSums:
    """The outcome-weighted covariate sums Y_p and the covariate vectors."""

    Y: tuple[int, ...]
    x_vectors: tuple[tuple[int, ...], ...]

    @classmethod
    def from_household(cls, h: Household, P: int) -> "HouseholdSums":
        xv = h.x_vectors(P)
        Y = tuple(
            sum(obs.y * obs.x[p] for obs in h.observations) for p in range(P)
        )
        return cls(Y, xv)

    @property
    def n_obs(self) -> int:
        return len(self.x_vectors[0])


@dataclass(frozen=True)
class Evaluation:
    value: float
    terms: int
    parity_spread: float | None = None

    def diagnostics(self) -> dict:
        return {
            "value": self.value,
            "terms": self.terms,
            "parity_spread": self.parity_spread,
        }


def _rel_spread(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


# ---------------------------------------------------------------------------
# Per-attribute kernel factors, vectorized over r-tuples
# ---------------------------------------------------------------------------

def _log_factor_gamma(K: np.ndarray, b: float, n: float, eps: float) -> np.ndarray:
    return -K * eps - n * np.log1p(b * K)


def _gamma_terms(
    K: np.ndarray, spec: IndependentGamma | GammaMixture
) -> np.ndarray:
    """Product over p of per-attribute kernel factors; K has shape (n, P)."""
    if isinstance(spec, IndependentGamma):
        logs = np.zeros(K.shape[0])
        for p in range(K.shape[1]):
            logs += _log_factor_gamma(K[:, p], spec.b[p], spec.n[p], spec.eps)
        return np.exp(logs)
    # mixture: per-p weighted sums, multiplied across p
    out = np.ones(K.shape[0])
    for p in range(K.shape[1]):
        acc = np.zeros(K.shape[0])
        for w, b, n in zip(spec.weights[p], spec.b[p], spec.n[p]):
            acc += w * np.exp(_log_factor_gamma(K[:, p], b, n, spec.eps))
        out *= acc
    return out


def _mgf_terms(K: np.ndarray, spec) -> np.ndarray:
    if isinstance(spec, GeneralizedMVGamma):
        load = np.asarray(spec.loadings, dtype=float)  # P x M
        th0 = np.asarray(spec.theta0, dtype=float)
        lam = np.asarray(spec.lam, dtype=float)
        th = np.asarray(spec.theta, dtype=float)
        logs = -(np.log1p(K @ load) @ th0)  # shared factors at t = -K
        logs -= np.log1p(K * lam) @ th
        return np.exp(logs)
    if isinstance(spec, BivariateNamed):
        return np.array([mgf_bivariate_named((-k[0], -k[1]), spec) for k in K])
    raise SpecError(f"no MGF route for {type(spec).__name__}")


def _kahan_sum(values: np.ndarray) -> float:
    # compensated accumulation in the given (increasing r-total) order
    total = 0.0
    comp = 0.0
    for v in values:
        y = v - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


# ---------------------------------------------------------------------------
# Evaluation routes
# ---------------------------------------------------------------------------

def h_naive(
    h: Household | HouseholdSums,
    spec: IndependentGamma,
    cfg: SeriesConfig,
    x_scale: float = 1.0,
) -> Evaluation:
    """Direct simplex enumeration of the alternating series for H_i."""
    if not isinstance(spec, IndependentGamma):
        raise SpecError("h_naive supports the independent-Gamma family only")
    sums = h if isinstance(h, HouseholdSums) else HouseholdSums.from_household(h, spec.P)
    P = len(sums.Y)
    M = sums.n_obs
    xv = sums.x_vectors
    cols = [tuple(xv[p][m] for p in range(P)) for m in range(M)]

    terms: list[float] = []          # signed terms, enumeration order
    totals: list[int] = []           # k.1 per term, for the parity split
    R = cfg.R + (1 if cfg.parity_check else 0)

    def term_at(K_int: tuple[int, ...], sign: int) -> float:
        logv = 0.0
        for p in range(P):
            d = x_scale * K_int[p]
            logv += -d * spec.eps - spec.n[p] * math.log1p(spec.b[p] * d)
        return sign * math.exp(logv)

    def recurse(m: int, spent: int, K: tuple[int, ...], sign: int) -> None:
        if m == M - 1:
            KK = list(K)
            s = sign
            for km in range(R - spent + 1):
                terms.append(term_at(tuple(KK), s))
                totals.append(spent + km)
                for p in range(P):
                    KK[p] += cols[m][p]
                s = -s
            return
        KK = K
        s = sign
        for km in range(R - spent + 1):
            recurse(m + 1, spent + km, KK, s)
            KK = tuple(KK[p] + cols[m][p] for p in range(P))
            s = -s

    recurse(0, 0, sums.Y, 1)
    if cfg.parity_check:
        at_R = math.fsum(t for t, s in zip(terms, totals) if s <= cfg.R)
        at_R1 = math.fsum(terms)
        return Evaluation(at_R, sum(1 for s in totals if s <= cfg.R), _rel_spread(at_R, at_R1))
    return Evaluation(math.fsum(terms), len(terms))


def _check_cache(sums: HouseholdSums, cache: DioCache) -> None:
    if cache.x_vectors != sums.x_vectors:
        raise SpecError(
            "cache was built for different x_vectors than this household"
        )


def h_grouped(
    sums: HouseholdSums,
    cache: DioCache,
    spec: IndependentGamma | GammaMixture,
    x_scale: float = 1.0,
    sub_cache: DioCache | None = None,
) -> Evaluation:
    """Grouped evaluation: sum of signed counts times kernel factors over r.

    Pass ``sub_cache`` (budget R-1 from the same enumeration) to get the
    consecutive-budget parity spread as a diagnostic.
    """
    _check_cache(sums, cache)
    K = x_scale * (cache.r_array + np.asarray(sums.Y, dtype=np.int64))
    vals = cache.count_array * _gamma_terms(K, spec)
    value = _kahan_sum(vals)
    spread = None
    if sub_cache is not None:
        sub = h_grouped(sums, sub_cache, spec, x_scale)
        spread = _rel_spread(value, sub.value)
    return Evaluation(value, len(vals), spread)


def h_mgf(
    sums: HouseholdSums,
    cache: DioCache,
    spec: GeneralizedMVGamma | BivariateNamed,
    x_scale: float = 1.0,
    sub_cache: DioCache | None = None,
) -> Evaluation:
    """Grouped evaluation through the prior's moment generating function."""
    _check_cache(sums, cache)
    K = x_scale * (cache.r_array + np.asarray(sums.Y, dtype=np.int64))
    vals = cache.count_array * _mgf_terms(K, spec)
    value = _kahan_sum(vals)
    spread = None
    if sub_cache is not None:
        sub = h_mgf(sums, sub_cache, spec, x_scale)
        spread = _rel_spread(value, sub.value)
    return Evaluation(value, len(vals), spread)


def moment_expansion_h(
    sums: HouseholdSums,
    cache: DioCache,
    moments,
    order: int,
    P: int,
    x_scale: float = 1.0,
) -> Evaluation:
    """Double-series fallback using raw moments instead of a closed-form MGF.

    ``moments(l)`` must return the raw moment E[beta_1^l1 ... beta_P^lP] for
    any multi-index with total degree <= ``order``.  The inner series in l is
    the Taylor expansion of exp(-K.beta); it converges only while every
    scaled K stays inside the moment series' radius of convergence, so this
    route suits small covariate scales or priors with slowly growing moments.
    """
    _check_cache(sums, cache)
    K = x_scale * (cache.r_array + np.asarray(sums.Y, dtype=np.int64))

    idxs = _multi_indices(P, order)
    coefs = []
    for l in idxs:
        mu = moments(l)
        fact = 1.0
        for lp in l:
            fact *= math.factorial(lp)
        coefs.append(mu / fact)
    # term(r) = sum_l mu_l / prod(l!) * prod_p (-K_p)^{l_p}
    vals = np.zeros(K.shape[0])
    for l, c in zip(idxs, coefs):
        mono = np.ones(K.shape[0])
        for p, lp in enumerate(l):
            if lp:
                mono *= (-K[:, p]) ** lp
        vals += c * mono
    total = _kahan_sum(cache.count_array * vals)
    return Evaluation(total, len(vals) * len(idxs))


def _multi_indices(P: int, order: int) -> list[tuple[int, ...]]:
    out: list[tuple[int, ...]] = []

    def rec(p: int, left: int, cur: tuple[int, ...]) -> None:
        if p == P - 1:
            for v in range(left + 1):
                out.append(cur + (v,))
            return
        for v in range(left + 1):
            rec(p + 1, left - v, cur + (v,))

    rec(0, order, ())
    return out


def gamma_moments(spec: IndependentGamma):
    """Raw-moment provider for independent Gammas (ignores translation)."""

    def mu(l: tuple[int, ...]) -> float:
        v = 1.0
        for p, lp in enumerate(l):
            v *= spec.b[p] ** lp * math.exp(
                math.lgamma(spec.n[p] + lp) - math.lgamma(spec.n[p])
            )
        return v

    return mu


# ---------------------------------------------------------------------------
# Dataset-level log marginal likelihood
# ---------------------------------------------------------------------------

@dataclass
class PreparedDataset:
    """Parameter-independent startup work for repeated evaluations.

    Holds one cache per distinct covariate signature plus the households
    grouped by (signature, Y); every grid point or optimizer step then costs
    only the cheap r-sums.  This is the amortization that makes grid search
    over the prior parameters practical.
    """

    groups: list[tuple[HouseholdSums, int]]  # distinct sums with multiplicity
    caches: dict[tuple[tuple[int, ...], ...], DioCache]
    sub_caches: dict[tuple[tuple[int, ...], ...], DioCache] | None
    total_obs: int
    x_scale: float
    R: int


def prepare_dataset(
    d: Dataset,
    cfg: SeriesConfig,
    caches: dict | None = None,
    sub_caches: dict | None = None,
) -> PreparedDataset:
    """Group households by (x signature, Y) and build any missing caches."""
    groups: dict[tuple, tuple[HouseholdSums, int]] = {}
    total_obs = 0
    for h in d.households:
        sums = HouseholdSums.from_household(h, d.P)
        total_obs += h.n_obs
        key = (sums.x_vectors, sums.Y)
        if key in groups:
            groups[key] = (groups[key][0], groups[key][1] + 1)
        else:
            groups[key] = (sums, 1)
    caches = dict(caches) if caches else {}
    if cfg.mode == "grouped":
        for sums, _ in groups.values():
            if sums.x_vectors not in caches:
                if cfg.parity_check:
                    from .diophantine import build_cache_pair

                    full, sub = build_cache_pair(sums.x_vectors, cfg.R + 1)
                    caches[sums.x_vectors] = sub  # budget R
                    if sub_caches is None:
                        sub_caches = {}
                    sub_caches[sums.x_vectors] = full  # budget R+1
                else:
                    caches[sums.x_vectors] = build_cache(sums.x_vectors, cfg.R)
    return PreparedDataset(
        list(groups.values()), caches, sub_caches, total_obs, d.x_scale, cfg.R
    )


def _h_for_spec(sums: HouseholdSums, cache: DioCache, spec, x_scale: float) -> float:
    if isinstance(spec, (IndependentGamma, GammaMixture)):
        return h_grouped(sums, cache, spec, x_scale).value
    if isinstance(spec, (GeneralizedMVGamma, BivariateNamed)):
        return h_mgf(sums, cache, spec, x_scale).value
    raise SpecError(f"unsupported spec {type(spec).__name__}")


def log_marginal_prepared(prep: PreparedDataset, spec) -> Evaluation:
    """Log marginal likelihood from a prepared dataset (grouped mode)."""
    inner = spec.inner if isinstance(spec, PointMassGamma) else spec
    total = 0.0
    terms = 0
    worst_spread = None
    for sums, mult in prep.groups:
        cache = prep.caches[sums.x_vectors]
        hv = _h_for_spec(sums, cache, inner, prep.x_scale)
        spread = None
        if prep.sub_caches is not None:
            alt = _h_for_spec(sums, prep.sub_caches[sums.x_vectors], inner, prep.x_scale)
            spread = _rel_spread(hv, alt)
            worst_spread = spread if worst_spread is None else max(worst_spread, spread)
        if hv <= 0.0 or not math.isfinite(hv):
            raise TruncationFailure(_group_label(sums), hv, spread)
        total += mult * math.log(hv)
        terms += mult * len(cache.entries)
    if isinstance(spec, PointMassGamma):
        total = _point_mass_combine(spec.w, total, prep.total_obs)
    return Evaluation(total, terms, worst_spread)


def _group_label(sums: HouseholdSums) -> str:
    return f"x={sums.x_vectors} Y={sums.Y}"


def _point_mass_combine(w: float, loglik_gamma: float, total_obs: int) -> float:
    # log( w * 2^{-total_obs} + (1-w) * exp(loglik_gamma) )
    log_delta = -total_obs * math.log(2.0)
    if w <= 0.0:
        return loglik_gamma
    if w >= 1.0:
        return log_delta
    a = math.log(w) + log_delta
    b = math.log1p(-w) + loglik_gamma
    hi, lo = (a, b) if a >= b else (b, a)
    return hi + math.log1p(math.exp(lo - hi))


def log_marginal(
    d: Dataset,
    spec,
    cfg: SeriesConfig,
    caches: dict | None = None,
) -> Evaluation:
    """Sum of log H_i over households (naive or grouped route).

    For the point-mass family the all-or-nothing mixture is combined at the
    dataset level: with weight w every Bernoulli factor is 1/2.
    """
    if cfg.mode == "naive":
        inner = spec.inner if isinstance(spec, PointMassGamma) else spec
        if not isinstance(inner, IndependentGamma):
            raise SpecError("naive mode supports the independent-Gamma family only")
        total = 0.0
        terms = 0
        worst = None
        total_obs = sum(h.n_obs for h in d.households)
        for h in d.households:
            ev = h_naive(h, inner, cfg, d.x_scale)
            if ev.parity_spread is not None:
                worst = ev.parity_spread if worst is None else max(worst, ev.parity_spread)
            if ev.value <= 0 or not math.isfinite(ev.value):
                raise TruncationFailure(h.id, ev.value, ev.parity_spread)
            total += math.log(ev.value)
            terms += ev.terms
        if isinstance(spec, PointMassGamma):
            total = _point_mass_combine(spec.w, total, total_obs)
        return Evaluation(total, terms, worst)
    prep = prepare_dataset(d, cfg, caches)
    return log_marginal_prepared(prep, spec)
