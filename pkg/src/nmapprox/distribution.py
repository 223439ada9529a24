"""Negative multinomial distribution NM(r, p) for real r > 0.

The pmf of ``K = (K_1, ..., K_d)`` is

    P(k) = Gamma(r + |k|) / (Gamma(r) prod k_i!) * p0^(r + |k|) * prod rho_i^k_i

with ``p0 = 1 - sum(p)`` and odds ``rho_i = p_i / p0``.  The mean is ``r rho``
and the covariance is ``r Sigma`` with ``Sigma = diag(rho) + rho rho^T``.
Everything here is evaluated in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .errors import BudgetExceededError, InvalidParameterError
from .parallel import ordered_map

__all__ = [
    "ModelParams",
    "DerivedParams",
    "derive",
    "log_pmf",
    "box_lattice",
    "truncated_total_mass",
    "marginal_params",
    "marginal_tail",
    "default_box_limit",
    "sample",
    "jitter",
    "round_half_even",
    "as_lattice",
]

# Reject |p|_1 this close to 1 so that p0 stays away from numerical zero.
P_SUM_GUARD = 1e-12
DEFAULT_SUMMAND_BUDGET = 50_000_000
SAMPLE_BATCH = 1 << 16


def _fail(msg: str) -> InvalidParameterError:
    return InvalidParameterError(msg, module=__name__)


@dataclass(frozen=True)
class ModelParams:
    """Stopping parameter ``r`` and cell probabilities ``p = (p_1, ..., p_d)``."""

    r: float
    p: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(v) for v in np.atleast_1d(np.asarray(self.p, dtype=float)))
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "r", float(self.r))
        self.validate()

    def validate(self) -> None:
        if len(self.p) < 1:
            raise _fail("need d >= 1 cell probabilities")
        if not (math.isfinite(self.r) and self.r > 0):
            raise _fail(f"r must be a positive real, got {self.r!r}")
        if not all(math.isfinite(v) and 0.0 < v < 1.0 for v in self.p):
            raise _fail(f"every p_i must lie in (0, 1), got {self.p!r}")
        if math.fsum(self.p) >= 1.0 - P_SUM_GUARD:
            raise _fail(f"sum(p) must be < 1 - {P_SUM_GUARD:g}, got {math.fsum(self.p)!r}")

    @property
    def d(self) -> int:
        return len(self.p)

    @property
    def p0(self) -> float:
        return 1.0 - math.fsum(self.p)

    def with_r(self, r: float) -> ModelParams:
        return ModelParams(r, self.p)


@dataclass(frozen=True)
class DerivedParams:
    p0: float
    rho: np.ndarray
    mean: np.ndarray
    sigma: np.ndarray
    sigma_inv: np.ndarray
    log_det_sigma: float

    @property
    def d(self) -> int:
        return self.rho.shape[0]


def derive(params: ModelParams) -> DerivedParams:
    """Odds, mean, unit covariance and its closed-form inverse and log-determinant.

    ``Sigma^{-1}_{ij} = 1{i=j}/rho_i - p0`` and ``|Sigma| = prod(rho) / p0``;
    no matrix is inverted numerically.
    """
    params.validate()
    p = np.asarray(params.p, dtype=float)
    p0 = params.p0
    rho = p / p0
    sigma = np.diag(rho) + np.outer(rho, rho)
    sigma_inv = np.diag(1.0 / rho) - p0
    log_det = float(np.sum(np.log(rho)) - math.log(p0))
    for arr in (rho, sigma, sigma_inv):
        arr.setflags(write=False)
    mean = params.r * rho
    mean.setflags(write=False)
    return DerivedParams(p0, rho, mean, sigma, sigma_inv, log_det)


def as_lattice(k, d: int | None = None) -> np.ndarray:
    """Validate ``k`` as one lattice point (shape ``(d,)``) or a stack ``(n, d)``."""
    arr = np.asarray(k)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise _fail("lattice points must have integer coordinates")
        arr = arr.astype(np.int64)
    if d is not None and arr.shape[-1] != d:
        raise _fail(f"lattice point has dimension {arr.shape[-1]}, expected {d}")
    if np.any(arr < 0):
        raise _fail("lattice points must be nonnegative")
    return arr


def log_pmf(params: ModelParams, k) -> np.ndarray | float:
    """``ln P_{r,p}(k)``; ``k`` may be a single point or an ``(n, d)`` stack."""
    k = as_lattice(k, params.d).astype(float)
    p0 = params.p0
    log_rho = np.log(np.asarray(params.p)) - math.log(p0)
    total = k.sum(axis=-1)
    out = (
        gammaln(params.r + total)
        - gammaln(params.r)
        - gammaln(k + 1.0).sum(axis=-1)
        + (params.r + total) * math.log(p0)
        + k @ log_rho
    )
    return float(out) if np.ndim(out) == 0 else out


def box_lattice(box_limit: int | Sequence[int], d: int) -> np.ndarray:
    """All points of ``prod_i [0, L_i]`` as an ``(n, d)`` int array (C order)."""
    limits = np.broadcast_to(np.asarray(box_limit, dtype=np.int64), (d,))
    axes = [np.arange(int(lim) + 1, dtype=np.int64) for lim in limits]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=-1)


def _check_budget(box_limit, d: int, budget: int) -> None:
    limits = np.broadcast_to(np.asarray(box_limit, dtype=np.int64), (d,))
    if np.any(limits < 0):
        raise _fail("box_limit must be nonnegative")
    count = math.prod(int(v) + 1 for v in limits)
    if count > budget:
        raise BudgetExceededError(
            f"box of {count} summands exceeds the budget of {budget}", module=__name__
        )


def truncated_total_mass(
    params: ModelParams, box_limit: int, budget: int = DEFAULT_SUMMAND_BUDGET
) -> float:
    """Sum of the pmf over the box ``[0, box_limit]^d``."""
    _check_budget(box_limit, params.d, budget)
    pts = box_lattice(box_limit, params.d)
    return math.fsum(np.exp(log_pmf(params, pts)))


def marginal_params(params: ModelParams, i: int) -> tuple[float, float]:
    """Parameters ``(r, q)`` of the one-dimensional marginal law of ``K_i`` (1-based ``i``).

    ``K_i ~ NM(r, q)`` with ``q = p_i / (p_i + p0)``.
    """
    if not 1 <= i <= params.d:
        raise IndexError(f"coordinate index {i} outside 1..{params.d}")
    p_i = params.p[i - 1]
    return params.r, p_i / (p_i + params.p0)


def marginal_tail(params: ModelParams, limits) -> np.ndarray:
    """``P(K_i > L_i)`` for each coordinate, from the negative binomial marginals."""
    limits = np.broadcast_to(np.asarray(limits, dtype=float), (params.d,))
    p = np.asarray(params.p)
    # scipy's nbinom(n, s) counts failures before n successes of probability s.
    success = params.p0 / (p + params.p0)
    return stats.nbinom.sf(limits, params.r, success)


def default_box_limit(
    params: ModelParams,
    order: int = 0,
    tol: float = 1e-8,
    max_doublings: int = 30,
) -> int:
    """Box size large enough that the neglected tail is below ``tol``.

    Starts from ``r rho_i + 12 sd_i`` per coordinate and doubles until the
    union-bound tail mass, multiplied by the largest ``|delta|^order`` on the
    box boundary, drops under ``tol``.
    """
    d = derive(params)
    r = params.r
    sd = np.sqrt(r * d.rho * (1.0 + d.rho))
    limit = float(np.max(np.ceil(r * d.rho + 12.0 * sd)))
    for _ in range(max_doublings):
        tail = float(np.sum(marginal_tail(params, limit)))
        edge = np.maximum(np.abs(limit - r * d.rho), r * d.rho) / math.sqrt(r)
        w = float(np.max(edge)) ** order
        if tail * max(w, 1.0) < tol:
            return int(limit)
        limit *= 2.0
    raise BudgetExceededError("box limit did not converge", module=__name__)


def sample(params: ModelParams, seed: int, n: int, threads: int = 1) -> np.ndarray:
    """Draw ``n`` vectors by the Gamma-Poisson mixture.

    ``lam ~ Gamma(r, 1)`` then ``K_i | lam ~ Poisson(lam rho_i)`` independently.
    Draws are produced in fixed-size batches, each with its own child seed, so
    the output depends only on ``seed`` and ``n``, never on ``threads``.
    """
    if n < 1:
        raise _fail("n must be >= 1")
    rho = derive(params).rho
    sizes = [SAMPLE_BATCH] * (n // SAMPLE_BATCH)
    if n % SAMPLE_BATCH:
        sizes.append(n % SAMPLE_BATCH)
    children = np.random.SeedSequence(seed).spawn(len(sizes))

    def one(args):
        child, m = args
        rng = np.random.default_rng(child)
        lam = rng.gamma(params.r, 1.0, size=m)
        return rng.poisson(lam[:, None] * rho[None, :])

    return np.concatenate(ordered_map(one, list(zip(children, sizes)), threads), axis=0)


def jitter(k, seed: int) -> np.ndarray:
    """``k + U`` with ``U`` uniform on the open cube ``(-1/2, 1/2)^d``.

    Works on a single point or a stack of points.  The result always rounds
    back to ``k``: draws of exactly ``-1/2`` are redrawn, and a sum that lands
    on a half-integer through floating-point rounding is nudged one ulp toward
    ``k``.
    """
    k = as_lattice(k)
    rng = np.random.default_rng(seed)
    u = rng.random(k.shape) - 0.5
    bad = u == -0.5
    while np.any(bad):
        u[bad] = rng.random(int(bad.sum())) - 0.5
        bad = u == -0.5
    kf = k.astype(float)
    x = kf + u
    edge = np.abs(x - kf) >= 0.5
    if np.any(edge):
        x[edge] = np.nextafter(x[edge], kf[edge])
    return x


def round_half_even(x) -> np.ndarray:
    """Nearest integer with ties to even (no clamping)."""
    return np.rint(np.asarray(x, dtype=float)).astype(np.int64)
