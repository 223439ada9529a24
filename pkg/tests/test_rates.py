import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nmapprox.distribution import ModelParams
from nmapprox.errors import NumericalError
from nmapprox.expansion import BulkSpec, residual_sweep
from nmapprox.rates import fit_rate

RS = [2.0**k for k in range(6, 15)]


def test_exact_power():
    fit = fit_rate([(r, r**-1.5) for r in RS])
    assert fit.slope == pytest.approx(-1.5, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)


def test_intercept():
    fit = fit_rate([(r, 3.0 * r**-0.5) for r in RS])
    assert fit.slope == pytest.approx(-0.5, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-12)


def test_points_and_consistency():
    rng = np.random.default_rng(0)
    pts = [(r, r**-1.0 * math.exp(rng.normal(scale=0.1))) for r in RS]
    fit = fit_rate(pts)
    x = np.array([a for a, _ in fit.points])
    y = np.array([b for _, b in fit.points])
    np.testing.assert_allclose(x, np.log(RS))
    slope, intercept = np.polyfit(x, y, 1)
    assert fit.slope == pytest.approx(slope, rel=1e-12)
    assert fit.intercept == pytest.approx(intercept, rel=1e-12)
    resid = y - (intercept + slope * x)
    r2 = 1 - resid @ resid / np.sum((y - y.mean()) ** 2)
    assert fit.r_squared == pytest.approx(r2, rel=1e-12)
    assert fit.ci95[0] < fit.slope < fit.ci95[1]


@given(st.floats(-3, 3), st.floats(-5, 5))
def test_recovers_any_power(alpha, c):
    fit = fit_rate([(r, math.exp(c) * r**alpha) for r in RS])
    assert fit.slope == pytest.approx(alpha, abs=1e-9)
    assert 0.0 <= fit.r_squared <= 1.0


def test_two_points():
    fit = fit_rate([(1.0, 1.0), (4.0, 0.5)])
    assert fit.slope == pytest.approx(-0.5)
    assert fit.slope_stderr == 0.0


@pytest.mark.parametrize(
    "pts",
    [[(1.0, 1.0)], [(1.0, 1.0), (2.0, 0.0)], [(1.0, 1.0), (2.0, -1.0)], [(0.0, 1.0), (2.0, 1.0)], [(2.0, 1.0), (2.0, 3.0)]],
)
def test_rejects(pts):
    with pytest.raises(NumericalError):
        fit_rate(pts)


def test_expansion_residual_series_d1():
    pts = [(r, residual_sweep(ModelParams(r, (0.5,)), BulkSpec(1.0)).max_normalized) for r in RS]
    fit = fit_rate(pts)
    assert -1.7 <= fit.slope <= -1.3
