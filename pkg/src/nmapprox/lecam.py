"""Jitter and rounding kernels, the four experiment families and deficiency upper estimates.

The families are indexed by a finite grid of cell-probability vectors with
``min(p0, p_1, ..., p_d) >= b``:

* ``nm``: ``NM(r, p)``
* ``gaussian-matched``: ``N(r rho, r Sigma)``
* ``gaussian-diagonal``: ``N(r rho, r diag(rho))``
* ``gaussian-stabilized``: ``N(sqrt(r rho), I / 4)``

A deficiency upper estimate fixes one kernel and reports the supremum over
the grid of the total-variation distance between the pushed-forward source
law and the target law.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.special import ndtr

from .distribution import (
    DEFAULT_SUMMAND_BUDGET,
    ModelParams,
    _check_budget,
    as_lattice,
    box_lattice,
    default_box_limit,
    derive,
    jitter,
    log_pmf,
    marginal_tail,
)
from .divergences import (
    GaussianSpec,
    hellinger_gaussians,
    matched_gaussian,
    tv_gaussians_mc,
    tv_jittered_vs_gaussian,
)
from .errors import InvalidParameterError
from .parallel import ordered_map
from .quadrature import cell_pass

__all__ = [
    "KINDS",
    "KERNELS",
    "ParameterSet",
    "theta_grid",
    "ExperimentFamily",
    "DeficiencyEstimate",
    "JitterKernel",
    "kernel_T1_star",
    "kernel_T2_star",
    "rounded_gaussian_tv",
    "deficiency_upper",
    "stabilized_distance_check",
]

KINDS = ("nm", "gaussian-matched", "gaussian-diagonal", "gaussian-stabilized")
KERNELS = ("T1", "T2", "identity")
GAUSSIAN_KINDS = KINDS[1:]


def _fail(msg: str) -> InvalidParameterError:
    return InvalidParameterError(msg, module=__name__)


def _min_prob(p: Sequence[float]) -> float:
    return min(1.0 - math.fsum(p), *p)


@dataclass(frozen=True)
class ParameterSet:
    """Finite grid inside ``{p : min(p0, p_1, ..., p_d) >= b}``.

    Grid members are stored as :class:`ModelParams`; their ``r`` is a
    placeholder that experiment families replace.
    """

    b: float
    grid: tuple[ModelParams, ...]

    def __post_init__(self):
        if not 0.0 < self.b < 1.0:
            raise _fail(f"b must lie in (0, 1), got {self.b!r}")
        grid = tuple(g if isinstance(g, ModelParams) else ModelParams(1.0, g) for g in self.grid)
        if not grid:
            raise _fail("parameter grid is empty")
        if len({g.d for g in grid}) != 1:
            raise _fail("grid members must share the dimension")
        for g in grid:
            if _min_prob(g.p) < self.b - 1e-15:
                raise _fail(f"grid point p={g.p} violates min(p0, p) >= {self.b}")
        object.__setattr__(self, "grid", grid)

    @property
    def d(self) -> int:
        return self.grid[0].d


def theta_grid(b: float, d: int, n: int = 5) -> ParameterSet:
    """``n`` points per axis on ``[b, 1 - b]``, keeping those with ``min(p0, p) >= b``."""
    if d < 1 or n < 1:
        raise _fail("need d >= 1 and n >= 1")
    axis = np.linspace(b, 1.0 - b, n) if n > 1 else np.array([b])
    pts = [tuple(float(v) for v in c) for c in itertools.product(axis, repeat=d)]
    keep = [c for c in pts if math.fsum(c) < 1.0 and _min_prob(c) >= b - 1e-12]
    if not keep:
        raise _fail(f"no grid point satisfies min(p0, p) >= {b} in dimension {d}")
    return ParameterSet(b, tuple(ModelParams(1.0, c) for c in keep))


@dataclass(frozen=True)
class ExperimentFamily:
    kind: str
    params: ParameterSet
    r: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise _fail(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not (math.isfinite(self.r) and self.r > 0):
            raise _fail(f"r must be a positive real, got {self.r!r}")

    def model(self, i: int) -> ModelParams:
        return self.params.grid[i].with_r(self.r)

    def law(self, i: int) -> ModelParams | GaussianSpec:
        """The law at grid point ``i``: NM parameters or a Gaussian spec."""
        m = self.model(i)
        if self.kind == "nm":
            return m
        derived = derive(m)
        r = self.r
        if self.kind == "gaussian-matched":
            return matched_gaussian(m)
        if self.kind == "gaussian-diagonal":
            return GaussianSpec(r * derived.rho, np.diag(r * derived.rho))
        return GaussianSpec(np.sqrt(r * derived.rho), 0.25 * np.eye(m.d))


@dataclass(frozen=True)
class DeficiencyEstimate:
    value: float
    direction: str
    sup_attained_at: ModelParams
    estimator_error: float
    per_point: tuple[tuple[tuple[float, ...], float, float], ...] = field(default=(), compare=False)
    extras: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.direction not in ("P-to-Q", "Q-to-P", "same"):
            raise _fail(f"unknown direction {self.direction!r}")
        if not 0.0 <= self.value <= 1.0:
            raise _fail(f"deficiency estimate {self.value!r} outside [0, 1]")


@dataclass(frozen=True)
class JitterKernel:
    """Lattice-to-continuum kernel: uniform on the unit cell centred at ``k``."""

    def sample(self, k, seed: int) -> np.ndarray:
        return jitter(k, seed)

    def density(self, x, k) -> np.ndarray | float:
        """1 on ``[k - 1/2, k + 1/2)^d`` and 0 elsewhere."""
        x = np.asarray(x, dtype=float)
        k = np.asarray(as_lattice(k), dtype=float)
        inside = np.all((x >= k - 0.5) & (x < k + 0.5), axis=-1)
        out = inside.astype(float)
        return float(out) if np.ndim(out) == 0 else out


def kernel_T1_star(k, seed: int) -> np.ndarray:
    return JitterKernel().sample(k, seed)


def kernel_T2_star(x) -> np.ndarray:
    """Componentwise nearest integer, ties to even, negatives clamped to 0."""
    return np.maximum(np.rint(np.asarray(x, dtype=float)), 0.0).astype(np.int64)


def _rounded_gaussian_tv_1d(params: ModelParams, budget: int) -> tuple[float, float]:
    derived = derive(params)
    r = params.r
    mu = r * float(derived.rho[0])
    sd = math.sqrt(r * float(derived.sigma[0, 0]))
    limit = max(default_box_limit(params, tol=1e-12), math.ceil(mu + 12.0 * sd))
    _check_budget(limit, 1, budget)
    k = np.arange(limit + 1, dtype=float)
    upper = ndtr((k + 0.5 - mu) / sd)
    lower = np.concatenate([[0.0], upper[:-1]])
    q = upper - lower
    p = np.exp(log_pmf(params, k.astype(np.int64)[:, None]))
    tail_p = float(marginal_tail(params, limit)[0])
    tail_q = float(ndtr(-(limit + 0.5 - mu) / sd))
    tv = 0.5 * math.fsum(np.abs(p - q))
    return tv, 0.5 * (tail_p + tail_q) + 1e-15


def _rounded_gaussian_tv_2d(params: ModelParams, budget: int, threads: int) -> tuple[float, float]:
    cp = cell_pass(params, budget=min(budget, 20_000_000), threads=threads)
    clamped = np.maximum(cp.points, 0)
    keys, inverse = np.unique(clamped, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    q = np.bincount(inverse, weights=cp.q_mass, minlength=len(keys))
    p = np.bincount(inverse, weights=cp.prob, minlength=len(keys))
    tv = 0.5 * math.fsum(np.abs(p - q))
    return tv, cp.tail_bound + 0.5 * cp.q_mass_error + 1e-15


def rounded_gaussian_tv(params: ModelParams, budget: int = DEFAULT_SUMMAND_BUDGET, threads: int = 1) -> tuple[float, float]:
    """``TV(NM(r, p), T2(N(r rho, r Sigma)))`` and an error bound.

    Cell masses of the rounded Gaussian come from normal CDF differences in
    ``d = 1`` (the cell of 0 absorbs everything below 1/2) and from cell
    quadrature in ``d = 2`` (negative cells are folded onto the clamped point).
    """
    if params.d == 1:
        return _rounded_gaussian_tv_1d(params, budget)
    if params.d == 2:
        return _rounded_gaussian_tv_2d(params, budget, threads)
    raise _fail("rounded-Gaussian TV supports d <= 2")


def _nm_identity_tv(a: ModelParams, b: ModelParams, budget: int) -> tuple[float, float]:
    limit = max(default_box_limit(a, tol=1e-12), default_box_limit(b, tol=1e-12))
    _check_budget(limit, a.d, budget)
    pts = box_lattice(limit, a.d)
    diff = np.exp(log_pmf(a, pts)) - np.exp(log_pmf(b, pts))
    tail = float(np.sum(marginal_tail(a, limit)) + np.sum(marginal_tail(b, limit)))
    return 0.5 * math.fsum(np.abs(diff)), 0.5 * tail


def _point_tv(src: ExperimentFamily, dst: ExperimentFamily, kernel: str, i: int, budget: int, seed: int):
    m = src.model(i)
    if kernel == "T1":
        if m.d <= 2:
            est = tv_jittered_vs_gaussian(m, budget=min(budget, 20_000_000))
            return est.value, est.extras["quadrature_error"] + est.extras["tail_bound"]
        est = tv_jittered_vs_gaussian(m, method="mc", budget=budget, seed=seed + i)
        return est.value, 3.0 * est.std_error
    if kernel == "T2":
        return rounded_gaussian_tv(m, budget)
    if src.kind == "nm":
        return _nm_identity_tv(m, dst.model(i), budget)
    est = tv_gaussians_mc(src.law(i), dst.law(i), n=budget, seed=seed + i)
    return est.value, 3.0 * est.std_error


def deficiency_upper(
    P_family: ExperimentFamily,
    Q_family: ExperimentFamily,
    kernel: str,
    budget: int = 1_000_000,
    seed: int = 0,
    threads: int = 1,
) -> DeficiencyEstimate:
    """Grid supremum of ``TV(kernel(source law), target law)``.

    ``P_family`` is the source and ``Q_family`` the target.  Supported pairs:
    ``T1`` maps ``nm`` onto ``gaussian-matched``; ``T2`` maps
    ``gaussian-matched`` onto ``nm``; ``identity`` compares two ``nm``
    families exactly or two Gaussian families by Monte Carlo (``budget``
    draws per grid point).  ``estimator_error`` is the largest per-point error.
    """
    if kernel not in KERNELS:
        raise _fail(f"kernel must be one of {KERNELS}, got {kernel!r}")
    if P_family.r != Q_family.r or P_family.params.grid != Q_family.params.grid:
        raise _fail("families must share r and the parameter grid")
    if budget < 1:
        raise _fail("budget must be >= 1")
    pair = (P_family.kind, Q_family.kind)
    if kernel == "T1" and pair != ("nm", "gaussian-matched"):
        raise _fail("T1 maps the nm family onto the gaussian-matched family")
    if kernel == "T2" and pair != ("gaussian-matched", "nm"):
        raise _fail("T2 maps the gaussian-matched family onto the nm family")
    if kernel == "identity" and (P_family.kind == "nm") != (Q_family.kind == "nm"):
        raise _fail("the identity kernel needs two nm families or two Gaussian families")
    direction = {"T1": "P-to-Q", "T2": "Q-to-P", "identity": "same"}[kernel]
    n = len(P_family.params.grid)
    results = ordered_map(lambda i: _point_tv(P_family, Q_family, kernel, i, budget, seed), range(n), threads)
    values = [v for v, _ in results]
    best = int(np.argmax(values))
    per_point = tuple((P_family.params.grid[i].p, float(v), float(e)) for i, (v, e) in enumerate(results))
    return DeficiencyEstimate(
        value=float(min(max(values[best], 0.0), 1.0)),
        direction=direction,
        sup_attained_at=P_family.model(best),
        estimator_error=float(max(e for _, e in results)),
        per_point=per_point,
        extras={"kernel": kernel, "r": P_family.r},
    )


def stabilized_distance_check(
    params: ModelParams, r: float | None = None, grid: ParameterSet | None = None
) -> tuple[float, float]:
    """Closed-form distances between the diagonal and stabilized Gaussian endpoints.

    Returns ``(h_q_qtilde, proxy)``.  ``h_q_qtilde`` is
    ``H(N(r rho, r Sigma), N(r rho, r diag(rho)))``.  Hellinger distance is
    invariant under the componentwise square root, so the proxy is the
    largest ``|H(Qd_p, Qd_p') - H(Qs_p, Qs_p')|`` over consecutive grid pairs,
    with ``Qd`` the diagonal and ``Qs`` the stabilized family.  It is ``nan``
    when no grid (or a one-point grid) is given.
    """
    r = params.r if r is None else float(r)
    m = params.with_r(r)
    derived = derive(m)
    q = matched_gaussian(m)
    q_diag = GaussianSpec(r * derived.rho, np.diag(r * derived.rho))
    h = hellinger_gaussians(q, q_diag).value
    if grid is None or len(grid.grid) < 2:
        return h, float("nan")
    diag = ExperimentFamily("gaussian-diagonal", grid, r)
    stab = ExperimentFamily("gaussian-stabilized", grid, r)
    gaps = []
    for i in range(len(grid.grid) - 1):
        a = hellinger_gaussians(diag.law(i), diag.law(i + 1)).value
        b = hellinger_gaussians(stab.law(i), stab.law(i + 1)).value
        gaps.append(abs(a - b))
    return h, max(gaps)
