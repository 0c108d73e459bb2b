"""Maximum marginal likelihood over the prior parameters.

Grid search is the default estimator: the Diophantine caches are built once
and every grid point reuses them, so the per-point cost is only the cheap
r-sums.  Newton's method with the closed-form gradient and Hessian of the
series is available as an opt-in refiner; the likelihood surface can be flat
and multi-modal, so it is best seeded from a grid optimum.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .data_model import Dataset, IndependentGamma, SpecError
from .diophantine import DioCache
from .series import (
    HouseholdSums,
    PreparedDataset,
    SeriesConfig,
    TruncationFailure,
    log_marginal_prepared,
    prepare_dataset,
)


class FitError(RuntimeError):
    pass


class SingularHessian(FitError):
    def __init__(self, cond: float):
        self.cond = cond
        super().__init__(f"Hessian is numerically singular (cond ~ {cond:.3g})")


@dataclass(frozen=True)
class GridAxis:
    center: float
    count: int
    spacing: float

    def __post_init__(self):
        if self.count < 1 or self.spacing <= 0:
            raise ValueError("need count >= 1 and spacing > 0")

    def points(self) -> list[float]:
        half = (self.count - 1) / 2.0
        return [self.center + (i - half) * self.spacing for i in range(self.count)]


@dataclass(frozen=True)
class GridSpec:
    """Axes ordered (b_1, n_1, ..., b_P, n_P) for the Gamma family."""

    axes: tuple[GridAxis, ...]

    def __post_init__(self):
        for ax in self.axes:
            if min(ax.points()) <= 0:
                raise ValueError("grid extends into non-positive parameter values")

    def points(self):
        return product(*(ax.points() for ax in self.axes))

    @property
    def cardinality(self) -> int:
        c = 1
        for ax in self.axes:
            c *= ax.count
        return c


@dataclass
class FitResult:
    omega_hat: tuple[float, ...]
    loglik: float
    trace: list[tuple[tuple[float, ...], float]]
    boundary_flag: bool = False
    newton_iters: int = 0
    converged: bool = True

    def to_json(self) -> str:
        return json.dumps(
            {
                "omega_hat": list(self.omega_hat),
                "loglik": self.loglik,
                "boundary_flag": self.boundary_flag,
                "newton_iters": self.newton_iters,
                "converged": self.converged,
                "trace": [
                    {"params": list(p), "loglik": v} for p, v in self.trace
                ],
            },
            indent=2,
        )


def params_to_spec(params, P: int, eps: float = 0.0) -> IndependentGamma:
    """Interleaved (b_1, n_1, ..., b_P, n_P) vector to an independent-Gamma spec."""
    if len(params) != 2 * P:
        raise SpecError(f"expected {2*P} parameters, got {len(params)}")
    b = tuple(params[2 * p] for p in range(P))
    n = tuple(params[2 * p + 1] for p in range(P))
    return IndependentGamma(b, n, eps)


def grid_fit(
    d: Dataset,
    grid: GridSpec,
    cfg: SeriesConfig,
    eps: float = 0.0,
    prep: PreparedDataset | None = None,
) -> FitResult:
    """Evaluate the log marginal likelihood on every grid point; return the argmax.

    Caches are built once (pass ``prep`` to reuse across calls).  Ties break
    to the lexicographically smallest parameter tuple; ``boundary_flag`` is
    set when the argmax touches a grid edge on any axis with count > 1.
    """
    if len(grid.axes) != 2 * d.P:
        raise SpecError(f"grid needs {2*d.P} axes for P={d.P}")
    if prep is None:
        prep = prepare_dataset(d, cfg)
    trace: list[tuple[tuple[float, ...], float]] = []
    best: tuple[float, ...] | None = None
    best_ll = -math.inf
    best_idx: tuple[int, ...] | None = None
    failures = 0
    axis_points = [ax.points() for ax in grid.axes]
    for idx in product(*(range(ax.count) for ax in grid.axes)):
        params = tuple(axis_points[a][i] for a, i in enumerate(idx))
        spec = params_to_spec(params, d.P, eps)
        try:
            ll = log_marginal_prepared(prep, spec).value
        except TruncationFailure:
            failures += 1
            continue
        trace.append((params, ll))
        if ll > best_ll or (ll == best_ll and (best is None or params < best)):
            best, best_ll, best_idx = params, ll, idx
    if best is None:
        raise FitError(f"all {grid.cardinality} grid points failed truncation")
    boundary = any(
        ax.count > 1 and (i == 0 or i == ax.count - 1)
        for ax, i in zip(grid.axes, best_idx)
    )
    return FitResult(best, best_ll, trace, boundary_flag=boundary)


# ---------------------------------------------------------------------------
# Analytic derivatives of the grouped series (independent-Gamma family)
# ---------------------------------------------------------------------------

def derivatives(
    sums: HouseholdSums,
    cache: DioCache,
    spec: IndependentGamma,
    x_scale: float = 1.0,
) -> tuple[float, np.ndarray, np.ndarray]:
    """H_i with its gradient and Hessian in (b_1, n_1, ..., b_P, n_P).

    All six partial-derivative series reuse the cache's signed counts; the
    translation factor exp(-K*eps) is parameter-free and simply rides along.
    """
    if cache.x_vectors != sums.x_vectors:
        raise SpecError("cache/household x_vectors mismatch")
    P = spec.P
    K = x_scale * (cache.r_array + np.asarray(sums.Y, dtype=np.int64))  # (n, P)
    b = np.asarray(spec.b)
    n = np.asarray(spec.n)
    logs = -spec.eps * K.sum(axis=1) - (np.log1p(b * K) @ n)
    w = cache.count_array * np.exp(logs)  # signed weights, one per r-tuple

    A = K / (1.0 + b * K)        # (n, P): dlog-factor / db_p  (up to -n_p)
    L = np.log1p(b * K)          # (n, P): -dlog-factor / dn_p

    H = float(np.sum(w))
    grad = np.empty(2 * P)
    hess = np.empty((2 * P, 2 * P))
    for p in range(P):
        grad[2 * p] = -np.sum(w * A[:, p]) * n[p]
        grad[2 * p + 1] = -np.sum(w * L[:, p])
    for p in range(P):
        ib, in_ = 2 * p, 2 * p + 1
        hess[ib, ib] = n[p] * (n[p] + 1.0) * np.sum(w * A[:, p] ** 2)
        hess[in_, in_] = np.sum(w * L[:, p] ** 2)
        cross = np.sum(w * (n[p] * A[:, p] * L[:, p] - A[:, p]))
        hess[ib, in_] = hess[in_, ib] = cross
        for q in range(p + 1, P):
            jb, jn = 2 * q, 2 * q + 1
            hess[ib, jb] = hess[jb, ib] = n[p] * n[q] * np.sum(w * A[:, p] * A[:, q])
            hess[in_, jn] = hess[jn, in_] = np.sum(w * L[:, p] * L[:, q])
            hess[ib, jn] = hess[jn, ib] = n[p] * np.sum(w * A[:, p] * L[:, q])
            hess[in_, jb] = hess[jb, in_] = n[q] * np.sum(w * A[:, q] * L[:, p])
    return H, grad, hess


def loglik_grad_hess(
    prep: PreparedDataset, spec: IndependentGamma
) -> tuple[float, np.ndarray, np.ndarray]:
    """Log marginal likelihood with gradient and Hessian over all households."""
    P = spec.P
    ll = 0.0
    g = np.zeros(2 * P)
    Hm = np.zeros((2 * P, 2 * P))
    for sums, mult in prep.groups:
        cache = prep.caches[sums.x_vectors]
        h, gh, hh = derivatives(sums, cache, spec, prep.x_scale)
        if h <= 0 or not math.isfinite(h):
            raise TruncationFailure(f"x={sums.x_vectors} Y={sums.Y}", h, None)
        ll += mult * math.log(h)
        g += mult * gh / h
        Hm += mult * (hh / h - np.outer(gh, gh) / h**2)
    return ll, g, Hm


POSITIVITY_FLOOR = 1e-6


def newton_fit(
    d: Dataset,
    spec0: IndependentGamma,
    cfg: SeriesConfig,
    max_iters: int = 50,
    tol: float = 1e-6,
    prep: PreparedDataset | None = None,
) -> FitResult:
    """Newton refinement of the independent-Gamma parameters.

    Iterates x + p with H p = -g, halving the step until the log likelihood
    does not decrease and projecting onto the positive orthant.  Stops when
    the gradient sup-norm drops below ``tol``.
    """
    if prep is None:
        prep = prepare_dataset(d, cfg)
    P = d.P
    theta = np.empty(2 * P)
    theta[0::2] = spec0.b
    theta[1::2] = spec0.n
    eps = spec0.eps

    trace: list[tuple[tuple[float, ...], float]] = []
    ll, g, Hm = loglik_grad_hess(prep, params_to_spec(theta, P, eps))
    trace.append((tuple(theta), ll))
    converged = np.max(np.abs(g)) < tol
    iters = 0
    while not converged and iters < max_iters:
        iters += 1
        cond = np.linalg.cond(Hm)
        if not np.isfinite(cond) or cond > 1e14:
            raise SingularHessian(cond)
        step = np.linalg.solve(Hm, -g)
        new_ll = -math.inf
        scale = 1.0
        for _ in range(40):
            cand = np.maximum(theta + scale * step, POSITIVITY_FLOOR)
            try:
                new_ll, new_g, new_H = loglik_grad_hess(
                    prep, params_to_spec(cand, P, eps)
                )
            except TruncationFailure:
                scale *= 0.5
                continue
            if new_ll >= ll:
                break
            scale *= 0.5
        else:
            break  # no improving step found
        theta, ll, g, Hm = cand, new_ll, new_g, new_H
        trace.append((tuple(theta), ll))
        converged = np.max(np.abs(g)) < tol
    return FitResult(
        tuple(theta), ll, trace, newton_iters=iters, converged=bool(converged)
    )
