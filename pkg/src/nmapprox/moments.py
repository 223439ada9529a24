"""Central moments of the standardized deviations and their truncated versions.

Closed forms (order 1-3 exact, order 4 only for the pure moment ``E delta_i^4``
and only to leading order) are checked against brute-force lattice sums.
Indices are 1-based throughout, matching the coordinate labels ``1..d``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence, Union

import numpy as np

from .distribution import (
    DEFAULT_SUMMAND_BUDGET,
    DerivedParams,
    ModelParams,
    _check_budget,
    box_lattice,
    default_box_limit,
    derive,
    log_pmf,
    marginal_tail,
)
from .errors import InvalidParameterError, UnsupportedMomentError
from .expansion import BulkSpec, in_bulk

__all__ = [
    "MomentIndex",
    "BoundCheck",
    "central_moment_formula",
    "brute_force_moment",
    "truncation_bound",
    "truncated_moment_bound_check",
    "moment_box_limit",
    "all_indices",
    "fourth_moment_gaps",
    "bound_onset",
]

Event = Union[BulkSpec, Callable[[np.ndarray], np.ndarray], None]


@dataclass(frozen=True)
class MomentIndex:
    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if not 1 <= len(idx) <= 4:
            raise InvalidParameterError("moment order must be between 1 and 4", module=__name__)
        object.__setattr__(self, "indices", idx)

    @property
    def order(self) -> int:
        return len(self.indices)

    def check(self, d: int) -> None:
        if any(not 1 <= i <= d for i in self.indices):
            raise InvalidParameterError(f"moment index {self.indices} outside 1..{d}", module=__name__)


def _as_index(idx) -> MomentIndex:
    return idx if isinstance(idx, MomentIndex) else MomentIndex(tuple(np.atleast_1d(idx)))


def all_indices(d: int, order: int) -> list[MomentIndex]:
    """Every index tuple of the given order (ordered, with repetition)."""
    return [MomentIndex(t) for t in itertools.product(range(1, d + 1), repeat=order)]


def central_moment_formula(derived: DerivedParams, r: float, idx) -> float:
    idx = _as_index(idx)
    idx.check(derived.d)
    rho = derived.rho
    if idx.order == 1:
        return 0.0
    if idx.order == 2:
        i, j = (v - 1 for v in idx.indices)
        return float(rho[i] * (i == j) + rho[i] * rho[j])
    if idx.order == 3:
        i, j, l = (v - 1 for v in idx.indices)
        val = (
            2.0 * rho[i] * rho[j] * rho[l]
            + (i == j) * rho[i] * rho[l]
            + (j == l) * rho[i] * rho[j]
            + (i == l) * rho[j] * rho[l]
            + (i == j == l) * rho[i]
        )
        return float(val) / math.sqrt(r)
    if len(set(idx.indices)) != 1:
        raise UnsupportedMomentError(
            f"only pure fourth moments have a closed form, got {idx.indices}", module=__name__
        )
    i = idx.indices[0] - 1
    # Leading term only; the O(1/r) remainder is not part of the formula.
    return float(3.0 * rho[i] ** 2 * (1.0 + rho[i]) ** 2)


@lru_cache(maxsize=4)
def _box_table(params: ModelParams, box_limit: int):
    pts = box_lattice(box_limit, params.d)
    prob = np.exp(log_pmf(params, pts))
    derived = derive(params)
    delta = (pts - params.r * derived.rho) / math.sqrt(params.r)
    for arr in (pts, prob, delta):
        arr.setflags(write=False)
    return pts, prob, delta


def moment_box_limit(params: ModelParams, order: int, tol: float = 1e-8) -> int:
    """Default box for an order-``order`` moment sum (see ``default_box_limit``)."""
    return default_box_limit(params, order=order, tol=tol)


def _event_mask(params: ModelParams, pts: np.ndarray, event: Event) -> np.ndarray | None:
    if event is None:
        return None
    if isinstance(event, BulkSpec):
        return np.asarray(in_bulk(derive(params), params.r, event, pts))
    return np.asarray(event(pts), dtype=bool)


def brute_force_moment(
    params: ModelParams,
    idx,
    box_limit: int | None = None,
    event: Event = None,
    budget: int = DEFAULT_SUMMAND_BUDGET,
) -> float:
    """``E[prod delta_{idx} 1_event(K)]`` summed over the box ``[0, box_limit]^d``.

    ``event`` is a :class:`BulkSpec` (meaning the bulk set) or a predicate on an
    ``(n, d)`` array of lattice points.
    """
    idx = _as_index(idx)
    idx.check(params.d)
    if box_limit is None:
        box_limit = moment_box_limit(params, idx.order)
    _check_budget(box_limit, params.d, budget)
    pts, prob, delta = _box_table(params, int(box_limit))
    term = prob.copy()
    for i in idx.indices:
        term *= delta[:, i - 1]
    mask = _event_mask(params, pts, event)
    if mask is not None:
        term = term[mask]
    return math.fsum(term)


def _edge_heuristic(params: ModelParams, idx: MomentIndex, box_limit: int) -> float:
    derived = derive(params)
    r = params.r
    tail = float(np.sum(marginal_tail(params, box_limit)))
    edge = np.maximum(np.abs(box_limit - r * derived.rho), r * derived.rho) / math.sqrt(r)
    mono = math.prod(float(edge[i - 1]) for i in idx.indices)
    return tail * max(mono, 1.0)


def truncation_bound(params: ModelParams, idx, box_limit: int, budget: int = DEFAULT_SUMMAND_BUDGET) -> float:
    """Numeric estimate of the part of the moment sum lying outside ``[0, box_limit]^d``.

    The change in the sum when the box is doubled, plus the tail mass beyond
    the doubled box times the largest monomial on its boundary.  A small
    floating-point floor is added so equality checks tolerate round-off.
    """
    idx = _as_index(idx)
    box_limit = int(box_limit)
    wide = 2 * box_limit + 1
    step = abs(
        brute_force_moment(params, idx, wide, budget=budget) - brute_force_moment(params, idx, box_limit, budget=budget)
    )
    return step + _edge_heuristic(params, idx, wide) + 1e-12


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float
    holds: bool
    p_complement: float
    truncation_bound: float


_BOUND_CONSTANTS = {1: (1.0, 1, 0.5), 2: (2.0, 2, 0.5), 3: (4.0, 3, 0.25)}


def truncated_moment_bound_check(
    params: ModelParams, idx, spec: BulkSpec, box_limit: int | None = None
) -> BoundCheck:
    """Compare a moment restricted to the bulk event with its unrestricted closed form.

    lhs is ``|E[prod delta 1_B] - closed form|``; rhs is
    ``c p0^{-m} P(B^c)^e`` with ``(c, m, e)`` equal to ``(1, 1, 1/2)``,
    ``(2, 2, 1/2)`` and ``(4, 3, 1/4)`` for orders 1, 2 and 3.  Both sides and
    ``P(B^c)`` are brute-forced.  ``holds`` allows for the truncation error.
    """
    idx = _as_index(idx)
    if idx.order not in _BOUND_CONSTANTS:
        raise InvalidParameterError("bound check covers orders 1-3", module=__name__)
    if box_limit is None:
        box_limit = moment_box_limit(params, idx.order)
    derived = derive(params)
    restricted = brute_force_moment(params, idx, box_limit, event=spec)
    main = central_moment_formula(derived, params.r, idx)
    lhs = abs(restricted - main)
    pts, prob, _ = _box_table(params, int(box_limit))
    outside = ~np.asarray(in_bulk(derived, params.r, spec, pts))
    p_comp = math.fsum(prob[outside])
    c, m, e = _BOUND_CONSTANTS[idx.order]
    rhs = c * derived.p0 ** (-m) * p_comp**e
    slack = truncation_bound(params, idx, int(box_limit))
    return BoundCheck(lhs, rhs, lhs <= rhs + slack, p_comp, slack)


def fourth_moment_gaps(p: Sequence[float], rs: Sequence[float], i: int = 1) -> list[tuple[float, float]]:
    """``(r, |E delta_i^4 - 3 rho_i^2 (1 + rho_i)^2|)`` from brute-force sums."""
    out = []
    for r in rs:
        params = ModelParams(r, tuple(p))
        derived = derive(params)
        idx = MomentIndex((i,) * 4)
        gap = abs(brute_force_moment(params, idx) - central_moment_formula(derived, r, idx))
        out.append((float(r), gap))
    return out


def bound_onset(p: Sequence[float], rs: Sequence[float], gamma: float = 1.0) -> tuple[float | None, list[tuple[float, bool]]]:
    """Smallest grid ``r`` from which every order 1-3 bound check holds for all larger grid values.

    Returns that ``r`` (``None`` if the largest grid value still fails) and the
    per-``r`` outcome.
    """
    spec = BulkSpec(gamma)
    outcome = []
    for r in sorted(float(v) for v in rs):
        params = ModelParams(r, tuple(p))
        ok = all(
            truncated_moment_bound_check(params, idx, spec).holds
            for order in (1, 2, 3)
            for idx in all_indices(params.d, order)
        )
        outcome.append((r, ok))
    onset = None
    for r, ok in reversed(outcome):
        if not ok:
            break
        onset = r
    return onset, outcome
