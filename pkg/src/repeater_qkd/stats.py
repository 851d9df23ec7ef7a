"""Log-linear slope fits of rate versus distance and their uncertainties."""
from __future__ import annotations

import math
import warnings
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .keyproc import bernoulli_stderr

__all__ = [
    "ExponentTable",
    "SlopeFit",
    "bernoulli_stderr",
    "exponent_vs_cutoff",
    "log_linear_fit",
    "resampled_slope",
]

Point = tuple[float, float, float]  # (distance_ratio, rate, stderr)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    slope_stderr: float
    n_cutoff: int = 0
    points_used: int = 0


def _clean(points: Sequence[Point]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    arr = np.asarray(points, dtype=float).reshape(-1, 3)
    good = arr[:, 1] > 0
    if not good.all():
        warnings.warn(f"excluding {int((~good).sum())} point(s) with nonpositive rate", RuntimeWarning,
                      stacklevel=3)
    arr = arr[good]
    if len(arr) < 2:
        raise ValueError("need at least two points with positive rate")
    return arr[:, 0], arr[:, 1], arr[:, 2]


def _wls(x: np.ndarray, y: np.ndarray, sigma: np.ndarray | None) -> tuple[float, float, float]:
    """Straight-line least squares; returns slope, intercept and slope stderr."""
    w = np.ones_like(x) if sigma is None else 1.0 / sigma**2
    sw = w.sum()
    xm = (w * x).sum() / sw
    ym = (w * y).sum() / sw
    sxx = (w * (x - xm) ** 2).sum()
    if sxx == 0:
        raise ValueError("all points share one distance")
    slope = (w * (x - xm) * (y - ym)).sum() / sxx
    intercept = ym - slope * xm
    if sigma is not None:
        err = math.sqrt(1.0 / sxx)
    elif len(x) > 2:
        resid = y - intercept - slope * x
        err = math.sqrt((resid**2).sum() / (len(x) - 2) / sxx)
    else:
        err = 0.0
    return float(slope), float(intercept), float(err)


def log_linear_fit(points: Sequence[Point], weighted: bool = True, n_cutoff: int = 0) -> SlopeFit:
    """Fit ``ln(rate) = intercept + slope * L``.

    Weights are ``1 / (stderr / rate)**2``. If any stderr is zero (exact data)
    or ``weighted`` is false, an ordinary fit is used and the slope error
    comes from the residual scatter.
    """
    x, rate, err = _clean(points)
    y = np.log(rate)
    sigma = err / rate if weighted and np.all(err > 0) else None
    slope, intercept, slope_err = _wls(x, y, sigma)
    return SlopeFit(slope, intercept, slope_err, n_cutoff, len(x))


def resampled_slope(
    points: Sequence[Point],
    resamples: int = 1000,
    rng_seed: int = 0,
    weighted: bool = True,
    n_cutoff: int = 0,
) -> SlopeFit:
    """Slope mean and spread over fits to normally resampled rates.

    Each rate is redrawn from ``N(rate, stderr)``; nonpositive draws are
    rejected and drawn again. With all stderrs zero this is exactly
    :func:`log_linear_fit`.
    """
    if resamples < 2:
        raise ValueError("resamples must be >= 2")
    x, rate, err = _clean(points)
    base = log_linear_fit(np.column_stack([x, rate, err]), weighted, n_cutoff)
    if not np.any(err > 0):
        return base
    rng = np.random.default_rng(rng_seed)
    draws = rng.normal(rate, err, size=(resamples, len(x)))
    bad = draws <= 0
    for _ in range(1000):
        if not bad.any():
            break
        draws[bad] = rng.normal(np.broadcast_to(rate, draws.shape)[bad], np.broadcast_to(err, draws.shape)[bad])
        bad = draws <= 0
    else:
        raise ValueError("could not draw positive rates; stderr too large relative to rate")

    y = np.log(draws)
    w = 1.0 / (err / rate) ** 2 if weighted and np.all(err > 0) else np.ones_like(x)
    xm = (w * x).sum() / w.sum()
    sxx = (w * (x - xm) ** 2).sum()
    ym = (y * w).sum(axis=1) / w.sum()
    slopes = ((w * (x - xm)) * (y - ym[:, None])).sum(axis=1) / sxx
    intercepts = ym - slopes * xm
    return SlopeFit(float(slopes.mean()), float(intercepts.mean()), float(slopes.std(ddof=1)), n_cutoff, len(x))


@dataclass(frozen=True)
class ExponentTable:
    cutoffs: tuple[int, ...]
    yield_fits: tuple[SlopeFit, ...]
    rate_fits: tuple[SlopeFit | None, ...]
    # True when yield slopes never decrease by more than their combined error
    yield_monotone: bool


def exponent_vs_cutoff(
    yield_points: Mapping[int, Sequence[Point]],
    rate_points: Mapping[int, Sequence[Point]] | None = None,
    weighted: bool = True,
) -> ExponentTable:
    """One yield fit (and optionally one key-rate fit) per cutoff ``n``.

    A key-rate fit that has fewer than two positive points is reported as None.
    """
    cutoffs = tuple(sorted(yield_points))
    yf = tuple(log_linear_fit(yield_points[n], weighted, n) for n in cutoffs)
    rf: list[SlopeFit | None] = []
    for n in cutoffs:
        pts = (rate_points or {}).get(n)
        if pts is None:
            rf.append(None)
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            try:
                rf.append(log_linear_fit(pts, weighted, n))
            except ValueError:
                rf.append(None)
    monotone = all(
        b.slope >= a.slope - 3.0 * math.hypot(a.slope_stderr, b.slope_stderr)
        for a, b in zip(yf, yf[1:])
    )
    return ExponentTable(cutoffs, yf, tuple(rf), monotone)
