"""Local expansion of the log-ratio between the NM pmf and its matched normal density.

For ``k`` in the bulk set, with ``delta = (k - r rho) / sqrt(r)``,

    ln P(k) - ln{ r^{-d/2} phi_Sigma(delta) } = F / sqrt(r) + S / r + O(r^{-3/2} (1 + |delta|_1^5)).

The functions below accept either one deviation vector or a stack of them
(leading axes are broadcast), so the rate experiments can evaluate whole
bulk sets at once.  Multi-index sums are always evaluated through their
factorised forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distribution import DerivedParams, ModelParams, as_lattice, derive, log_pmf
from .errors import BudgetExceededError, InvalidParameterError, OutOfBulkError

__all__ = [
    "StandardizedDeviation",
    "BulkSpec",
    "ExpansionEval",
    "ResidualSweep",
    "standardize",
    "in_bulk",
    "gaussian_local_log_density",
    "correction_F",
    "correction_S",
    "evaluate_expansion",
    "bulk_points",
    "residual_sweep",
]

TERM_SETS = {"full": (True, True), "no-S": (True, False), "none": (False, False)}


@dataclass(frozen=True)
class StandardizedDeviation:
    delta: np.ndarray
    l1_norm: np.ndarray | float

    @classmethod
    def from_delta(cls, delta) -> StandardizedDeviation:
        delta = np.asarray(delta, dtype=float)
        l1 = np.abs(delta).sum(axis=-1)
        return cls(delta, float(l1) if np.ndim(l1) == 0 else l1)


@dataclass(frozen=True)
class BulkSpec:
    gamma: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise InvalidParameterError(f"gamma must be > 0, got {self.gamma!r}", module=__name__)


@dataclass(frozen=True)
class ExpansionEval:
    log_ratio_exact: float
    f_term: float
    s_term: float
    residual: float
    r: float
    l1_norm: float

    @property
    def normalized_residual(self) -> float:
        return abs(self.residual) / (1.0 + self.l1_norm**5)


def _delta_array(delta) -> np.ndarray:
    return np.asarray(getattr(delta, "delta", delta), dtype=float)


def standardize(derived: DerivedParams, r: float, k) -> StandardizedDeviation:
    k = np.asarray(k, dtype=float)
    return StandardizedDeviation.from_delta((k - r * derived.rho) / math.sqrt(r))


def in_bulk(derived: DerivedParams, r: float, spec: BulkSpec, k):
    """Membership in the bulk set ``B_{r,p}(gamma)``; boundary points count as inside."""
    delta = standardize(derived, r, k).delta
    bound = spec.gamma * r ** (-1.0 / 3.0)
    root_r = math.sqrt(r)
    per_axis = np.max(np.abs(delta / (root_r * derived.rho)), axis=-1) <= bound
    total = np.abs(delta.sum(axis=-1) * derived.p0 / root_r) <= bound
    out = per_axis & total
    return bool(out) if np.ndim(out) == 0 else out


def gaussian_local_log_density(derived: DerivedParams, r: float, delta):
    """``ln{ r^{-d/2} phi_Sigma(delta) }`` from the closed-form inverse and determinant."""
    delta = _delta_array(delta)
    s = delta.sum(axis=-1)
    quad = np.sum(delta**2 / derived.rho, axis=-1) - derived.p0 * s**2
    out = -0.5 * derived.d * math.log(2.0 * math.pi * r) - 0.5 * derived.log_det_sigma - 0.5 * quad
    return float(out) if np.ndim(out) == 0 else out


def correction_F(derived: DerivedParams, delta):
    """First-order term (coefficient of ``r^{-1/2}``).

    ``-1/2 sum_i delta_i (1/rho_i + p0)
      + 1/6 [sum_i delta_i^3 / rho_i^2 - p0^2 (sum_i delta_i)^3]``
    """
    delta = _delta_array(delta)
    rho, p0 = derived.rho, derived.p0
    s = delta.sum(axis=-1)
    linear = -0.5 * np.sum(delta * (1.0 / rho + p0), axis=-1)
    cubic = (np.sum(delta**3 / rho**2, axis=-1) - p0**2 * s**3) / 6.0
    out = linear + cubic
    return float(out) if np.ndim(out) == 0 else out


def correction_S(derived: DerivedParams, delta):
    """Second-order term (coefficient of ``r^{-1}``)."""
    delta = _delta_array(delta)
    rho, p0 = derived.rho, derived.p0
    s = delta.sum(axis=-1)
    const = (p0 - 1.0 - np.sum(1.0 / rho)) / 12.0
    quadratic = 0.25 * (np.sum(delta**2 / rho**2, axis=-1) + p0**2 * s**2)
    quartic = -(np.sum(delta**4 / rho**3, axis=-1) - p0**3 * s**4) / 12.0
    out = const + quadratic + quartic
    return float(out) if np.ndim(out) == 0 else out


def _log_ratio_parts(params: ModelParams, k: np.ndarray):
    derived = derive(params)
    r = params.r
    sd = standardize(derived, r, k)
    exact = log_pmf(params, k) - gaussian_local_log_density(derived, r, sd)
    return derived, sd, exact


def evaluate_expansion(
    params: ModelParams, spec: BulkSpec, k, allow_out_of_bulk: bool = False
) -> ExpansionEval:
    """Exact log-ratio, both correction terms and the leftover residual at ``k``.

    Raises :class:`OutOfBulkError` outside the bulk unless ``allow_out_of_bulk``
    is set (the expansion makes no claim there; use only for diagnostics).
    """
    k = as_lattice(k, params.d)
    if k.ndim != 1:
        raise InvalidParameterError("evaluate_expansion takes a single lattice point", module=__name__)
    derived, sd, exact = _log_ratio_parts(params, k)
    if not allow_out_of_bulk and not in_bulk(derived, params.r, spec, k):
        raise OutOfBulkError(f"k={k.tolist()} is outside the bulk for gamma={spec.gamma}", module=__name__)
    f = correction_F(derived, sd)
    s = correction_S(derived, sd)
    r = params.r
    residual = exact - f / math.sqrt(r) - s / r
    return ExpansionEval(float(exact), f, s, float(residual), r, float(sd.l1_norm))


def _bulk_box(params: ModelParams, spec: BulkSpec) -> list[np.ndarray]:
    derived = derive(params)
    r = params.r
    half = spec.gamma * derived.rho * r ** (2.0 / 3.0)
    centre = r * derived.rho
    lo = np.maximum(np.floor(centre - half) - 1, 0).astype(np.int64)
    hi = np.ceil(centre + half).astype(np.int64) + 1
    return [np.arange(a, b + 1) for a, b in zip(lo, hi)]


def bulk_points(
    params: ModelParams,
    spec: BulkSpec,
    max_points: int = 100_000,
    seed: int = 0,
    enumerate_limit: int = 20_000_000,
) -> tuple[np.ndarray, bool]:
    """Lattice points of the bulk set.

    The enclosing box ``|k_i - r rho_i| <= gamma rho_i r^{2/3}`` is enumerated
    and filtered.  For ``d >= 3`` a box larger than ``max_points`` is replaced
    by ``max_points`` uniform draws from it (seeded).  Returns the points and
    whether they are a subsample.
    """
    axes = _bulk_box(params, spec)
    size = math.prod(len(a) for a in axes)
    subsampled = params.d >= 3 and size > max_points
    if subsampled:
        rng = np.random.default_rng(seed)
        pts = np.stack([rng.choice(a, size=max_points) for a in axes], axis=-1)
    else:
        if size > enumerate_limit:
            raise BudgetExceededError(f"bulk box has {size} points", module=__name__)
        grid = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grid], axis=-1)
    mask = in_bulk(derive(params), params.r, spec, pts)
    return pts[np.atleast_1d(mask)], subsampled


@dataclass(frozen=True)
class ResidualSweep:
    r: float
    n_points: int
    max_residual: float
    max_normalized: float
    argmax_normalized: tuple[int, ...]
    subsampled: bool


def residual_sweep(
    params: ModelParams,
    spec: BulkSpec,
    terms: str = "full",
    max_points: int = 100_000,
    seed: int = 0,
) -> ResidualSweep:
    """Max over the bulk of ``|residual|`` and of ``|residual| / (1 + |delta|_1^5)``.

    ``terms`` selects which correction terms are subtracted: ``"full"`` (F and
    S), ``"no-S"`` (F only) or ``"none"``.
    """
    try:
        use_f, use_s = TERM_SETS[terms]
    except KeyError:
        raise InvalidParameterError(f"terms must be one of {sorted(TERM_SETS)}", module=__name__) from None
    pts, subsampled = bulk_points(params, spec, max_points=max_points, seed=seed)
    if len(pts) == 0:
        raise OutOfBulkError("bulk set contains no lattice points", module=__name__)
    derived, sd, exact = _log_ratio_parts(params, pts)
    r = params.r
    resid = exact
    if use_f:
        resid = resid - correction_F(derived, sd) / math.sqrt(r)
    if use_s:
        resid = resid - correction_S(derived, sd) / r
    absres = np.abs(resid)
    normalized = absres / (1.0 + sd.l1_norm**5)
    i = int(np.argmax(normalized))
    return ResidualSweep(
        r=r,
        n_points=len(pts),
        max_residual=float(absres.max()),
        max_normalized=float(normalized[i]),
        argmax_normalized=tuple(int(v) for v in pts[i]),
        subsampled=subsampled,
    )
