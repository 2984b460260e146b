from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dauval.decay import (
    GameCurve,
    TailFitError,
    TailParams,
    build_curve,
    evaluate_curve,
    fit_power_law_tail,
    power_law_ols,
    select_t_min,
)
from dauval.timeseries import DauSeries


def _ols_oracle(x, y):
    # textbook closed form on the raw sums
    n = len(x)
    sx, sy = sum(x), sum(y)
    sxx = sum(a * a for a in x)
    sxy = sum(a * b for a, b in zip(x, y))
    slope = (n * sxy - sx * sy) / (n * sxx - sx * sx)
    return slope, (sy - slope * sx) / n


def test_t_min_monotone_decreasing_is_zero():
    assert select_t_min(DauSeries("g", 0, list(range(30, 0, -1)))) == 0


def test_t_min_rise_then_decay():
    values = [10 * (i + 1) for i in range(10)] + [200] + [200 - 5 * i for i in range(1, 20)]
    assert select_t_min(DauSeries("g", 0, values)) == 10


def test_t_min_clamped():
    values = list(range(1, 21))
    values[-2] = 100
    assert select_t_min(DauSeries("g", 0, values)) == 20 - 4


def test_short_series_raises():
    with pytest.raises(TailFitError):
        select_t_min(DauSeries("g", 0, [5, 4, 3]))


def test_gamma_recovered_from_rounded_series():
    t = np.arange(100)
    values = np.rint(10000 * (t + 1.0) ** -1.2)
    tail = fit_power_law_tail(DauSeries("g", 0, values), 0)
    x, y = np.log(t + 1.0), np.log(values)
    slope, _ = _ols_oracle(list(x), list(y))
    assert tail.gamma == pytest.approx(-slope, rel=1e-9)
    assert abs(tail.gamma - 1.2) < 0.05


def test_constant_series_is_flat():
    tail = fit_power_law_tail(DauSeries("g", 0, [500] * 20), 0)
    assert tail.gamma == 0.0
    assert tail.scale == pytest.approx(500.0, rel=1e-12)
    assert tail.flat_reason is None


def test_two_distinct_points_exact_exponent():
    # (1, 1000) and (4, 1000 / 16) each twice: exponent 2 by a two-point fit
    t = np.array([1.0, 1.0, 4.0, 4.0])
    y = np.array([1000.0, 1000.0, 62.5, 62.5])
    slope, intercept, rmse = power_law_ols(t, y)
    exact = (math.log(62.5) - math.log(1000.0)) / (math.log(4.0) - math.log(1.0))
    assert slope == pytest.approx(exact, abs=1e-12)
    assert math.exp(intercept) == pytest.approx(1000.0, rel=1e-12)
    assert rmse < 1e-12


def test_growing_series_flagged():
    tail = fit_power_law_tail(DauSeries("g", 0, list(range(10, 30))), 0)
    assert tail.gamma == 0.0 and tail.flat_reason == "growing"


def test_zero_days_dropped_from_fit():
    t = np.arange(30)
    values = np.rint(1e5 * (t + 1.0) ** -0.8).astype(int)
    holed = values.copy()
    holed[[5, 9]] = 0
    full = fit_power_law_tail(DauSeries("g", 0, values), 0)
    part = fit_power_law_tail(DauSeries("g", 0, holed), 0)
    assert part.gamma == pytest.approx(full.gamma, abs=0.01)


def test_build_curve_short_is_flat():
    curve = build_curve(DauSeries("g", 0, [3, 5, 4]))
    assert curve.tail.flat_reason == "short"
    assert evaluate_curve(curve, 50) == 4.0


def _curve(values, gamma, t_min=0):
    s = DauSeries("g", 0, values)
    return GameCurve(s, TailParams(gamma, 1.0, t_min, 0.0))


def test_anchor_at_last_day():
    curve = build_curve(DauSeries("g", 0, [50, 40, 30, 25, 22, 20, 19, 18, 17, 16]))
    assert evaluate_curve(curve, curve.last_observed) == curve.anchor_dau == 16.0


def test_zero_gamma_flat_forever():
    curve = _curve([9, 8, 7, 6], 0.0)
    assert evaluate_curve(curve, [4, 100, 10**6]).tolist() == [6.0, 6.0, 6.0]


def test_gamma_one_halves_at_double_tail_time():
    curve = _curve([100, 80, 60, 50, 40], 1.0, t_min=1)
    end = curve.last_observed
    elapsed = end - 1 + 1
    t = 1 - 1 + 2 * elapsed
    assert evaluate_curve(curve, t) == pytest.approx(curve.anchor_dau / 2, rel=1e-12)
    # numeric oracle: ratio formula evaluated independently
    assert evaluate_curve(curve, 17) == pytest.approx(40.0 * (end - 1 + 1) / (17 - 1 + 1), rel=1e-12)


def test_observed_window_exact():
    values = [0, 0, 5, 9, 7, 6]
    curve = build_curve(DauSeries("g", 0, values))
    assert evaluate_curve(curve, np.arange(4)).tolist() == [5.0, 9.0, 7.0, 6.0]


def test_negative_t_rejected():
    with pytest.raises(ValueError):
        evaluate_curve(_curve([3, 2, 1, 1], 1.0), -1)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 3.0), st.integers(4, 40), st.integers(1, 10**6))
def test_tail_non_increasing_and_positive(gamma, n, anchor):
    curve = _curve([anchor] * n, gamma)
    t = np.arange(n - 1, n + 5000)
    v = evaluate_curve(curve, t)
    assert (np.diff(v) <= 0).all()
    assert (v > 0).all()


@settings(max_examples=40, deadline=None)
@given(st.floats(0.3, 2.5), st.floats(2.0, 50.0))
def test_noiseless_fit_and_scale_invariance(gamma, c):
    t = np.arange(1.0, 200.0)
    y = 1e4 * t**-gamma
    slope, intercept, rmse = power_law_ols(t, y)
    assert rmse < 1e-6
    assert -slope == pytest.approx(gamma, abs=1e-9)
    slope_c, intercept_c, _ = power_law_ols(t, c * y)
    assert slope_c == pytest.approx(slope, abs=1e-9)
    assert math.exp(intercept_c) == pytest.approx(c * math.exp(intercept), rel=1e-9)


def test_integer_series_scale_invariance():
    t = np.arange(60)
    base = np.rint(1e4 * (t + 1.0) ** -0.9).astype(int)
    a = fit_power_law_tail(DauSeries("g", 0, base), 0)
    b = fit_power_law_tail(DauSeries("g", 0, base * 7), 0)
    assert b.gamma == pytest.approx(a.gamma, abs=1e-12)
    assert b.scale == pytest.approx(7 * a.scale, rel=1e-12)
