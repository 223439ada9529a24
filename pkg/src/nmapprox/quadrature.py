"""Unit-cell Gauss-Legendre quadrature against a Gaussian density.

The jittered NM law has density ``P(k)`` on the unit cell centred at each
lattice point ``k``.  For every cell we integrate, with tensorized
Gauss-Legendre rules,

* ``(sqrt(P(k)) - sqrt(q(x)))^2``   (Hellinger),
* ``|P(k) - q(x)|``                (total variation),
* ``q(x)``                         (Gaussian cell mass, i.e. the law of the rounded Gaussian),

where ``q`` is the ``N(mu, C)`` density.  Along the x-axis each cell is split
where ``q`` crosses the constant ``P(k)``, and in 2d the y-axis is split at
the extreme ordinates of that level set, so the kinks of ``|P - q|`` fall on
panel boundaries.  Cells with negative coordinates are included (there
``P = 0``) so the Gaussian mass left of the support is accounted for.

Only ``d <= 2`` is supported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import stats

from .distribution import ModelParams, derive, log_pmf
from .errors import BudgetExceededError, InvalidParameterError, NumericalError
from .parallel import ordered_map

__all__ = ["CellPass", "cell_pass", "gauss_legendre_unit", "DEFAULT_ORDER"]

DEFAULT_ORDER = 16
COVERAGE = 1e-10
CHUNK = 1 << 15


def gauss_legendre_unit(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes on ``[-1/2, 1/2]`` and weights summing to 1."""
    t, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * t, 0.5 * w


@numba.njit(nogil=True, cache=True)
def _split_points(lo, hi, centre, peak_log, log_p, curvature, out):
    # Panel edges for [lo, hi], split where centre -/+ half-width crosses the level.
    out[0] = lo
    n = 1
    if log_p > -np.inf and peak_log > log_p:
        half = math.sqrt(2.0 * (peak_log - log_p) / curvature)
        for c in (centre - half, centre + half):
            if lo < c < hi:
                out[n] = c
                n += 1
    out[n] = hi
    return n


@numba.njit(nogil=True, cache=True)
def _cells_1d(offsets, prob, t, w, prec, lognorm):
    n = offsets.shape[0]
    m = t.shape[0]
    h = np.empty(n)
    qm = np.empty(n)
    tv = np.empty(n)
    edges = np.empty(4)
    a_coef = prec[0, 0]
    for c in range(n):
        pk = prob[c]
        sp = math.sqrt(pk)
        log_p = math.log(pk) if pk > 0.0 else -np.inf
        a0 = offsets[c, 0]
        npan = _split_points(a0 - 0.5, a0 + 0.5, 0.0, lognorm, log_p, a_coef, edges)
        hs = 0.0
        qs = 0.0
        ts = 0.0
        for s in range(npan):
            u = edges[s]
            v = edges[s + 1]
            mid = 0.5 * (u + v)
            width = v - u
            for i in range(m):
                a = mid + width * t[i]
                q = math.exp(lognorm - 0.5 * a_coef * a * a)
                ww = width * w[i]
                diff = sp - math.sqrt(q)
                hs += ww * diff * diff
                qs += ww * q
                ts += ww * abs(pk - q)
        h[c] = hs
        qm[c] = qs
        tv[c] = ts
    return h, qm, tv


@numba.njit(nogil=True, cache=True)
def _cells_2d(offsets, prob, t, w, prec, lognorm):
    n = offsets.shape[0]
    m = t.shape[0]
    h = np.empty(n)
    qm = np.empty(n)
    tv = np.empty(n)
    edges = np.empty(4)
    yedges = np.empty(4)
    A = prec[0, 0]
    B = prec[0, 1]
    C = prec[1, 1]
    c_cond = C - B * B / A
    for c in range(n):
        pk = prob[c]
        sp = math.sqrt(pk)
        log_p = math.log(pk) if pk > 0.0 else -np.inf
        a0 = offsets[c, 0]
        b0 = offsets[c, 1]
        hs = 0.0
        qs = 0.0
        ts = 0.0
        # The level set q = P(k) is an ellipse; split y at its extreme ordinates.
        ny = _split_points(b0 - 0.5, b0 + 0.5, 0.0, lognorm, log_p, c_cond, yedges)
        for sy in range(ny):
            yu = yedges[sy]
            yv = yedges[sy + 1]
            ymid = 0.5 * (yu + yv)
            ywidth = yv - yu
            for j in range(m):
                b = ymid + ywidth * t[j]
                # q(., b) is Gaussian in a with peak at -B b / A.
                centre = -B * b / A
                peak = lognorm - 0.5 * c_cond * b * b
                npan = _split_points(a0 - 0.5, a0 + 0.5, centre, peak, log_p, A, edges)
                for s in range(npan):
                    u = edges[s]
                    v = edges[s + 1]
                    mid = 0.5 * (u + v)
                    width = v - u
                    for i in range(m):
                        a = mid + width * t[i]
                        da = a - centre
                        q = math.exp(peak - 0.5 * A * da * da)
                        ww = ywidth * w[j] * width * w[i]
                        diff = sp - math.sqrt(q)
                        hs += ww * diff * diff
                        qs += ww * q
                        ts += ww * abs(pk - q)
        h[c] = hs
        qm[c] = qs
        tv[c] = ts
    return h, qm, tv


@dataclass(frozen=True)
class CellPass:
    """Per-cell integrals for one ``(r, p)`` against ``N(r rho, r Sigma)``."""

    points: np.ndarray  # (n, d) int, may include negative coordinates
    prob: np.ndarray  # P(k), zero off the support
    q_mass: np.ndarray
    hellinger_sq: float  # (1/2) sum of cell integrals of (sqrt P - sqrt q)^2
    tv: float  # (1/2) sum of cell integrals of |P - q|
    tail_p: float
    tail_q: float
    h_error: float  # |order m - order m/2| on hellinger_sq
    tv_error: float
    q_mass_error: float  # summed per-cell |order m - order m/2| on q_mass
    order: int

    @property
    def n_cells(self) -> int:
        return self.points.shape[0]

    @property
    def tail_bound(self) -> float:
        # Mass outside the enumerated cells bounds both neglected contributions.
        return 0.5 * (max(self.tail_p, 0.0) + max(self.tail_q, 0.0))


def _region(params: ModelParams, radius: float) -> np.ndarray:
    derived = derive(params)
    r = params.r
    mu = r * derived.rho
    cov = r * derived.sigma
    prec = derived.sigma_inv / r
    sd = np.sqrt(np.diag(cov))
    axes = [np.arange(math.floor(m - radius * s) - 1, math.ceil(m + radius * s) + 2) for m, s in zip(mu, sd)]
    grid = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grid], axis=-1)
    dv = pts - mu
    # Keep a cell when its nearest corner region can reach the ellipse.
    maha = np.sqrt(np.einsum("ni,ij,nj->n", dv, prec, dv))
    slack = math.sqrt(float(np.max(np.linalg.eigvalsh(prec))) * params.d) * 0.5
    return pts[maha <= radius + slack]


def _run(params: ModelParams, pts: np.ndarray, prob: np.ndarray, order: int, threads: int):
    derived = derive(params)
    r = params.r
    mu = r * derived.rho
    prec = np.ascontiguousarray(derived.sigma_inv / r)
    lognorm = -0.5 * params.d * math.log(2.0 * math.pi) - 0.5 * (derived.log_det_sigma + params.d * math.log(r))
    t, w = gauss_legendre_unit(order)
    kernel = _cells_1d if params.d == 1 else _cells_2d
    offsets = np.ascontiguousarray(pts - mu)
    bounds = list(range(0, len(pts), CHUNK)) + [len(pts)]
    parts = ordered_map(
        lambda ab: kernel(offsets[ab[0] : ab[1]], prob[ab[0] : ab[1]], t, w, prec, lognorm),
        list(zip(bounds[:-1], bounds[1:])),
        threads,
    )
    h = np.concatenate([p[0] for p in parts])
    qm = np.concatenate([p[1] for p in parts])
    tv = np.concatenate([p[2] for p in parts])
    return h, qm, tv


def cell_pass(
    params: ModelParams,
    order: int = DEFAULT_ORDER,
    budget: int = 20_000_000,
    threads: int = 1,
    coverage: float = COVERAGE,
) -> CellPass:
    """Enumerate cells covering all but ``coverage`` of both laws and integrate them.

    The covering region is a Mahalanobis ellipse, widened until the
    neglected mass of both the NM pmf and the Gaussian is below ``coverage``.
    Results are cached per ``(params, order, coverage)``; ``threads`` and
    ``budget`` do not affect the numbers.
    """
    if params.d > 2:
        raise InvalidParameterError("cell quadrature supports d <= 2; use the Monte Carlo method", module=__name__)
    if order < 2:
        raise InvalidParameterError("quadrature order must be >= 2", module=__name__)
    return _cell_pass_cached(params, order, coverage, budget, threads)


def _cell_pass_cached(params, order, coverage, budget, threads):
    key = (params, order, coverage)
    hit = _CACHE.get(key)
    if hit is not None:
        return hit
    result = _compute_pass(params, order, coverage, budget, threads)
    if len(_CACHE) >= _CACHE_SIZE:
        _CACHE.pop(next(iter(_CACHE)))
    _CACHE[key] = result
    return result


_CACHE: dict = {}
_CACHE_SIZE = 3


def clear_cache() -> None:
    _CACHE.clear()


def _compute_pass(params, order, coverage, budget, threads):
    radius = math.sqrt(stats.chi2.isf(coverage / 10.0, params.d))
    for _ in range(12):
        pts = _region(params, radius)
        if len(pts) > budget:
            raise BudgetExceededError(f"{len(pts)} cells exceed the budget of {budget}", module=__name__)
        support = np.all(pts >= 0, axis=1)
        prob = np.zeros(len(pts))
        prob[support] = np.exp(log_pmf(params, pts[support]))
        tail_p = 1.0 - math.fsum(prob)
        h, qm, tv = _run(params, pts, prob, order, threads)
        tail_q = 1.0 - math.fsum(qm)
        if tail_p <= coverage and tail_q <= coverage:
            break
        radius += 1.0
    else:
        raise NumericalError("cell region did not reach the requested coverage", module=__name__)
    h2, qm2, tv2 = _run(params, pts, prob, max(order // 2, 2), threads)
    hsq = 0.5 * math.fsum(h)
    tvv = 0.5 * math.fsum(tv)
    out = CellPass(
        points=pts,
        prob=prob,
        q_mass=qm,
        hellinger_sq=hsq,
        tv=tvv,
        tail_p=tail_p,
        tail_q=tail_q,
        h_error=abs(hsq - 0.5 * math.fsum(h2)),
        tv_error=abs(tvv - 0.5 * math.fsum(tv2)),
        q_mass_error=math.fsum(np.abs(qm - qm2)),
        order=order,
    )
    for arr in (out.points, out.prob, out.q_mass):
        arr.setflags(write=False)
    return out
