"""Hellinger and total-variation distances between the jittered NM law and Gaussians.

Convention: ``H^2(P, Q) = 1 - integral sqrt(dP dQ)``, so ``H`` lies in
``[0, 1]`` and ``TV <= sqrt(2) H``.  Changing the convention rescales
constants only, never rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .distribution import ModelParams, derive, log_pmf, sample
from .errors import InvalidParameterError, NumericalError
from .expansion import BulkSpec, in_bulk
from .parallel import ordered_map
from .quadrature import DEFAULT_ORDER, cell_pass

__all__ = [
    "DivergenceEstimate",
    "GaussianSpec",
    "matched_gaussian",
    "hellinger_jittered_vs_gaussian",
    "tv_jittered_vs_gaussian",
    "hellinger_gaussians",
    "hellinger_gaussians_mc",
    "tv_gaussians_mc",
    "hellinger_rate_bound",
    "prop2_bound",
    "empirical_constant",
    "bulk_tail_bound",
    "tail_bound_eq8",
    "bulk_exit_frequency",
]

METHODS = ("cell-quadrature", "monte-carlo", "closed-form")
MC_BATCH = 1 << 18
DEFAULT_CLIP = 1e6


@dataclass(frozen=True)
class DivergenceEstimate:
    value: float
    method: str
    n: int
    std_error: float = 0.0
    seed: int | None = None
    extras: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidParameterError(f"unknown method {self.method!r}", module=__name__)
        if not self.std_error >= 0:
            raise NumericalError("negative standard error", module=__name__)


@dataclass(frozen=True)
class GaussianSpec:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise InvalidParameterError("covariance shape does not match the mean", module=__name__)
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(cov).max()))):
            raise InvalidParameterError("covariance is not symmetric", module=__name__)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise InvalidParameterError("covariance is not positive definite", module=__name__) from None
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def d(self) -> int:
        return self.mean.size

    @property
    def chol(self) -> np.ndarray:
        return self._chol

    def log_density(self, x: np.ndarray) -> np.ndarray:
        z = np.linalg.solve(self._chol, (np.atleast_2d(x) - self.mean).T)
        half_logdet = float(np.sum(np.log(np.diag(self._chol))))
        return -0.5 * np.sum(z * z, axis=0) - half_logdet - 0.5 * self.d * math.log(2.0 * math.pi)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mean + rng.standard_normal((n, self.d)) @ self._chol.T


def matched_gaussian(params: ModelParams) -> GaussianSpec:
    """``N(r rho, r Sigma)``."""
    derived = derive(params)
    return GaussianSpec(params.r * derived.rho, params.r * derived.sigma)


def _logdet(m: np.ndarray) -> float:
    sign, val = np.linalg.slogdet(m)
    if sign <= 0:
        raise InvalidParameterError("matrix is not positive definite", module=__name__)
    return float(val)


def hellinger_gaussians(a: GaussianSpec, b: GaussianSpec) -> DivergenceEstimate:
    """Closed-form Hellinger distance between two normal laws.

    ``1 - H^2 = |A|^{1/4} |B|^{1/4} |M|^{-1/2} exp(-diff^T M^{-1} diff / 8)``
    with ``M = (A + B) / 2``, evaluated in log space so ``a == b`` gives 0 exactly.
    """
    if a.d != b.d:
        raise InvalidParameterError("dimension mismatch", module=__name__)
    mid = 0.5 * (a.cov + b.cov)
    diff = a.mean - b.mean
    maha = float(diff @ np.linalg.solve(mid, diff))
    log_bc = 0.25 * _logdet(a.cov) + 0.25 * _logdet(b.cov) - 0.5 * _logdet(mid) - maha / 8.0
    h2 = max(-math.expm1(min(log_bc, 0.0)), 0.0)
    return DivergenceEstimate(math.sqrt(h2), "closed-form", 0, 0.0, None, {"h2": h2})


def _batches(n: int, seed: int, size: int = MC_BATCH):
    sizes = [size] * (n // size) + ([n % size] if n % size else [])
    return list(zip(np.random.SeedSequence(seed).spawn(len(sizes)), sizes))


def _reduce(stats: list[np.ndarray]) -> np.ndarray:
    # Sum per-batch statistic vectors in batch order (thread-count independent).
    total = np.zeros_like(stats[0])
    for s in stats:
        total = total + s
    return total


def _mean_se(s1: float, s2: float, n: int) -> tuple[float, float]:
    mean = float(s1) / n
    var = max(float(s2) / n - mean * mean, 0.0) * n / max(n - 1, 1)
    return mean, math.sqrt(var / n)


def hellinger_gaussians_mc(a: GaussianSpec, b: GaussianSpec, n: int, seed: int, threads: int = 1) -> DivergenceEstimate:
    """Monte Carlo ``H^2 = 1 - E_a[sqrt(phi_b / phi_a)]``; used to validate the closed form."""

    def one(job):
        child, m = job
        x = a.sample(np.random.default_rng(child), m)
        w = np.exp(0.5 * (b.log_density(x) - a.log_density(x)))
        return np.array([w.sum(), (w * w).sum()])

    s1, s2 = _reduce(ordered_map(one, _batches(n, seed), threads))
    mean, se = _mean_se(s1, s2, n)
    h2 = 1.0 - mean
    h = math.sqrt(max(h2, 0.0))
    return DivergenceEstimate(h, "monte-carlo", n, se / (2.0 * h) if h > 0 else se, seed, {"h2": h2, "h2_std_error": se})


def tv_gaussians_mc(a: GaussianSpec, b: GaussianSpec, n: int, seed: int, threads: int = 1) -> DivergenceEstimate:
    """Monte Carlo ``TV = E_a[(1 - phi_b / phi_a)_+]``."""

    def one(job):
        child, m = job
        x = a.sample(np.random.default_rng(child), m)
        v = np.maximum(-np.expm1(b.log_density(x) - a.log_density(x)), 0.0)
        return np.array([v.sum(), (v * v).sum()])

    s1, s2 = _reduce(ordered_map(one, _batches(n, seed), threads))
    mean, se = _mean_se(s1, s2, n)
    return DivergenceEstimate(min(max(mean, 0.0), 1.0), "monte-carlo", n, se, seed)


def _jitter_mc_stats(params: ModelParams, n: int, seed: int, cap: float, threads: int) -> np.ndarray:
    gauss = matched_gaussian(params)

    def one(job):
        child, m = job
        x = gauss.sample(np.random.default_rng(child), m)
        k = np.rint(x)
        inside = np.all(k >= 0, axis=1)
        log_p = np.full(m, -np.inf)
        if inside.any():
            log_p[inside] = log_pmf(params, k[inside].astype(np.int64))
        log_ratio = log_p - gauss.log_density(x)
        w = np.exp(0.5 * log_ratio)
        clipped = w > cap
        w = np.minimum(w, cap)
        tv = np.maximum(-np.expm1(log_ratio), 0.0)
        return np.array([w.sum(), (w * w).sum(), tv.sum(), (tv * tv).sum(), clipped.sum()], dtype=float)

    return _reduce(ordered_map(one, _batches(n, seed), threads))


def hellinger_jittered_vs_gaussian(
    params: ModelParams,
    method: str = "quadrature",
    budget: int | None = None,
    seed: int = 0,
    threads: int = 1,
    order: int = DEFAULT_ORDER,
    clip_cap: float = DEFAULT_CLIP,
    tol: float = 1e-10,
) -> DivergenceEstimate:
    """``H(P~_{r,p}, N(r rho, r Sigma))`` by unit-cell quadrature or Monte Carlo.

    Quadrature (``d <= 2``): ``H^2 = 1/2 sum_k int_cell (sqrt P(k) - sqrt q)^2``
    over cells covering all but ``1e-10`` of both laws; ``budget`` caps the
    number of cells and ``tol`` the quadrature error estimate on ``H^2``.

    Monte Carlo: ``H^2 = 1 - E_Q[sqrt(p~/q)]`` with ``budget`` Gaussian draws,
    the integrand clipped at ``clip_cap`` (clipped count reported).
    """
    if method in ("quadrature", "cell-quadrature"):
        cp = cell_pass(params, order=order, budget=budget or 20_000_000, threads=threads)
        if cp.h_error > tol:
            raise NumericalError(f"cell quadrature error estimate {cp.h_error:.3g} exceeds {tol:g}", module=__name__)
        h2 = cp.hellinger_sq
        extras = {
            "h2": h2,
            "quadrature_error": cp.h_error,
            "tail_bound": cp.tail_bound,
            "order": order,
        }
        return DivergenceEstimate(math.sqrt(h2), "cell-quadrature", cp.n_cells, 0.0, None, extras)
    if method in ("mc", "monte-carlo"):
        n = int(budget or 1_000_000)
        if n < 2:
            raise InvalidParameterError("Monte Carlo budget must be >= 2", module=__name__)
        s = _jitter_mc_stats(params, n, seed, clip_cap, threads)
        mean, se = _mean_se(s[0], s[1], n)
        h2 = 1.0 - mean
        h = math.sqrt(max(h2, 0.0))
        extras = {"h2": h2, "h2_std_error": se, "clipped": int(s[4]), "clip_cap": clip_cap}
        return DivergenceEstimate(h, "monte-carlo", n, se / (2.0 * h) if h > 0 else se, seed, extras)
    raise InvalidParameterError(f"unknown method {method!r}", module=__name__)


def tv_jittered_vs_gaussian(
    params: ModelParams,
    method: str = "quadrature",
    budget: int | None = None,
    seed: int = 0,
    threads: int = 1,
    order: int = DEFAULT_ORDER,
    tol: float = 1e-5,
) -> DivergenceEstimate:
    """``TV(P~_{r,p}, N(r rho, r Sigma))``.

    Quadrature (``d <= 2``) integrates ``|P(k) - q|`` cell by cell; ``tol``
    bounds the quadrature error estimate relative to the value.  Monte Carlo
    samples the Gaussian and averages ``(1 - p~/q)_+``.
    """
    if method in ("quadrature", "cell-quadrature"):
        cp = cell_pass(params, order=order, budget=budget or 20_000_000, threads=threads)
        if cp.tv_error > tol * max(cp.tv, 1e-300):
            raise NumericalError(f"TV quadrature error estimate {cp.tv_error:.3g} too large", module=__name__)
        extras = {"quadrature_error": cp.tv_error, "tail_bound": cp.tail_bound, "order": order}
        return DivergenceEstimate(min(cp.tv, 1.0), "cell-quadrature", cp.n_cells, 0.0, None, extras)
    if method in ("mc", "monte-carlo"):
        n = int(budget or 1_000_000)
        s = _jitter_mc_stats(params, n, seed, DEFAULT_CLIP, threads)
        mean, se = _mean_se(s[2], s[3], n)
        return DivergenceEstimate(min(max(mean, 0.0), 1.0), "monte-carlo", n, se, seed)
    raise InvalidParameterError(f"unknown method {method!r}", module=__name__)


def hellinger_rate_bound(params: ModelParams, c_universal: float) -> tuple[float, float]:
    """Both forms of the Hellinger bound for a caller-chosen constant ``C``.

    tight = ``C / sqrt(r p0) * sqrt(d^2 + sum 1/p_i)``;
    loose = ``C d / sqrt(r) * 2 / min(p0, ..., p_d)``.
    """
    if not c_universal > 0:
        raise InvalidParameterError("the universal constant must be positive", module=__name__)
    p = np.asarray(params.p)
    d, r, p0 = params.d, params.r, params.p0
    tight = c_universal / math.sqrt(r * p0) * math.sqrt(d * d + float(np.sum(1.0 / p)))
    loose = c_universal * d / math.sqrt(r) * 2.0 / min(p0, float(p.min()))
    return tight, loose


def empirical_constant(h: float, params: ModelParams) -> float:
    """The ``C`` that makes the tight bound hold with equality for an observed ``H``."""
    return h / hellinger_rate_bound(params, 1.0)[0]


def bulk_tail_bound(params: ModelParams, r: float | None = None, clamp: bool = True) -> float:
    """``100 d exp{-min(p) / (100 d^2 max(p)) r^{1/3}}``, the jittered-bulk exit bound.

    ``r`` defaults to ``params.r``.  Clamped to ``[0, 1]`` unless ``clamp`` is false.
    """
    r = params.r if r is None else float(r)
    p = np.asarray(params.p)
    d = params.d
    val = 100.0 * d * math.exp(-float(p.min()) / (100.0 * d * d * float(p.max())) * r ** (1.0 / 3.0))
    return min(val, 1.0) if clamp else val


# Alternative names kept for API compatibility.
prop2_bound = hellinger_rate_bound
tail_bound_eq8 = bulk_tail_bound


def bulk_exit_frequency(params: ModelParams, gamma: float, n: int, seed: int, threads: int = 1) -> tuple[float, float]:
    """Monte Carlo frequency (and its standard error) of ``K`` leaving the bulk.

    ``X = K + U`` lies in the jittered bulk exactly when ``K`` lies in the bulk,
    so this is also the exit frequency of the jittered variable.
    """
    k = sample(params, seed, n, threads=threads)
    outside = ~np.asarray(in_bulk(derive(params), params.r, BulkSpec(gamma), k))
    freq = float(outside.mean())
    return freq, math.sqrt(max(freq * (1.0 - freq), 0.0) / n)
