"""Log-log least-squares fits of decay rates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy import stats

from .errors import NumericalError

__all__ = ["RateFitResult", "fit_rate"]


@dataclass(frozen=True)
class RateFitResult:
    slope: float
    intercept: float
    r_squared: float
    points: tuple[tuple[float, float], ...]  # (ln r, ln value)
    slope_stderr: float
    ci95: tuple[float, float]


def fit_rate(points: Iterable[tuple[float, float]]) -> RateFitResult:
    """Fit ``ln value = intercept + slope * ln r`` by ordinary least squares."""
    pts = [(float(r), float(v)) for r, v in points]
    if len(pts) < 2:
        raise NumericalError("a rate fit needs at least two points", module=__name__)
    if any(not (r > 0 and math.isfinite(r)) for r, _ in pts):
        raise NumericalError("r values must be positive and finite", module=__name__)
    if any(not (v > 0 and math.isfinite(v)) for _, v in pts):
        raise NumericalError("cannot fit a rate to nonpositive or non-finite values", module=__name__)
    x = np.log([r for r, _ in pts])
    y = np.log([v for _, v in pts])
    if np.ptp(x) == 0:
        raise NumericalError("r values must not all coincide", module=__name__)
    fit = stats.linregress(x, y)
    n = len(pts)
    se = float(fit.stderr) if n > 2 else 0.0
    half = float(stats.t.ppf(0.975, n - 2)) * se if n > 2 else 0.0
    r2 = min(max(float(fit.rvalue) ** 2, 0.0), 1.0) if np.ptp(y) > 0 else 1.0
    return RateFitResult(
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        r_squared=r2,
        points=tuple(zip(x.tolist(), y.tolist())),
        slope_stderr=se,
        ci95=(float(fit.slope) - half, float(fit.slope) + half),
    )
