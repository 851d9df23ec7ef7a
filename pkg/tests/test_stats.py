import inspect
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from repeater_qkd.stats import bernoulli_stderr, exponent_vs_cutoff, log_linear_fit, resampled_slope

L = np.linspace(0, 3, 7)


def exact(rate_fn, err=0.0):
    return [(x, rate_fn(x), err * rate_fn(x)) for x in L]


def test_exact_exponentials():
    fit = log_linear_fit(exact(lambda x: 0.3 * math.exp(-x)))
    assert fit.slope == pytest.approx(-1.0, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(0.3), abs=1e-12)
    assert log_linear_fit(exact(lambda x: math.exp(-x / 2))).slope == pytest.approx(-0.5, abs=1e-12)


def test_two_point_slope():
    fit = log_linear_fit([(0.5, 2.0, 0.1), (2.5, 0.5, 0.025)])
    assert fit.slope == pytest.approx((math.log(0.5) - math.log(2.0)) / 2.0)


@given(st.floats(1e-6, 1e6), st.floats(-3, 0))
def test_scale_equivariance(c, k):
    pts = [(x, math.exp(k * x) * (1 + 0.1 * math.sin(7 * x)), 0.05 * math.exp(k * x)) for x in L]
    scaled = [(x, c * r, c * e) for x, r, e in pts]
    a, b = log_linear_fit(pts), log_linear_fit(scaled)
    assert b.slope == pytest.approx(a.slope, abs=1e-9)
    assert b.intercept == pytest.approx(a.intercept + math.log(c), abs=1e-9)


def test_weighting_follows_log_domain_errors():
    # the noisy last point is down-weighted
    pts = [(0.0, 1.0, 0.01), (1.0, math.exp(-1), 0.01 * math.exp(-1)), (2.0, 0.5, 0.5)]
    weighted = log_linear_fit(pts)
    plain = log_linear_fit(pts, weighted=False)
    assert abs(weighted.slope + 1.0) < abs(plain.slope + 1.0)


def test_nonpositive_points_excluded_with_warning():
    pts = exact(lambda x: math.exp(-x), 0.01) + [(4.0, 0.0, 0.0)]
    with pytest.warns(RuntimeWarning, match="nonpositive"):
        fit = log_linear_fit(pts)
    assert fit.slope == pytest.approx(-1.0)
    assert fit.points_used == 7
    with pytest.raises(ValueError), pytest.warns(RuntimeWarning):
        log_linear_fit([(0.0, 1.0, 0.1), (1.0, -1.0, 0.1)])
    with pytest.raises(ValueError):
        log_linear_fit([(1.0, 1.0, 0.1), (1.0, 2.0, 0.1)])


def test_resampled_zero_stderr_equals_fit():
    pts = [(x, math.exp(-0.7 * x) * (1 + 0.05 * x * x), 0.0) for x in L]
    a, b = log_linear_fit(pts), resampled_slope(pts, rng_seed=3)
    assert abs(a.slope - b.slope) <= 1e-12
    assert abs(a.intercept - b.intercept) <= 1e-12


def test_resampled_defaults_and_validation():
    assert inspect.signature(resampled_slope).parameters["resamples"].default == 1000
    with pytest.raises(ValueError):
        resampled_slope(exact(math.exp, 0.1), resamples=1)


def test_resampled_mean_converges_to_fit():
    pts = exact(lambda x: math.exp(-0.6 * x), 1e-6)
    res = resampled_slope(pts, rng_seed=1)
    assert res.slope == pytest.approx(-0.6, abs=1e-6)


def test_resampled_spread_scales_with_noise():
    lo = resampled_slope(exact(lambda x: math.exp(-x), 0.01), 4000, rng_seed=2)
    hi = resampled_slope(exact(lambda x: math.exp(-x), 0.02), 4000, rng_seed=2)
    assert hi.slope_stderr / lo.slope_stderr == pytest.approx(2.0, rel=0.1)
    # with matching weights the spread reproduces the analytic WLS error
    assert lo.slope_stderr == pytest.approx(log_linear_fit(exact(lambda x: math.exp(-x), 0.01)).slope_stderr,
                                            rel=0.1)


def test_resampled_redraws_nonpositive():
    pts = [(0.0, 1.0, 0.8), (1.0, 0.5, 0.4), (2.0, 0.2, 0.2)]
    res = resampled_slope(pts, 500, rng_seed=0)
    assert math.isfinite(res.slope) and math.isfinite(res.slope_stderr)


def test_exponent_table():
    yields = {
        1: exact(lambda x: math.exp(-x), 0.01),
        40: exact(lambda x: math.exp(-x / 2), 0.01),
        10: exact(lambda x: math.exp(-0.7 * x), 0.01),
    }
    rates = {1: exact(lambda x: math.exp(-1.1 * x), 0.01), 10: [(0.0, 1.0, 0.1), (1.0, 0.0, 0.0)]}
    table = exponent_vs_cutoff(yields, rates)
    assert table.cutoffs == (1, 10, 40)
    assert [round(f.slope, 6) for f in table.yield_fits] == [-1.0, -0.7, -0.5]
    assert table.rate_fits[0].slope == pytest.approx(-1.1)
    assert table.rate_fits[1] is None and table.rate_fits[2] is None
    assert table.yield_monotone
    flipped = exponent_vs_cutoff({1: yields[40], 2: yields[1]})
    assert not flipped.yield_monotone


def test_bernoulli_stderr_matches_bootstrap():
    rng = np.random.default_rng(0)
    k, y = 10_000, 0.05
    data = rng.random(k) < y
    est = data.mean()
    boot = [data[rng.integers(0, k, k)].mean() for _ in range(4000)]
    assert bernoulli_stderr(est, k) == pytest.approx(np.std(boot, ddof=1), rel=0.05)
    assert bernoulli_stderr(0.3, 0) == 0.0
