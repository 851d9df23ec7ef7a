"""Classical post-processing of a round log.

Sifting keeps heralded rounds with matching bases whose BSM photons arrived
within ``dt_cutoff`` of each other. A Psi+ herald means X-basis bits should be
correlated and Z-basis bits anti-correlated; any other outcome counts as an
error. The actual projected Bell state is hidden from this module, as it
would be in the lab.
"""
from __future__ import annotations

import dataclasses
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .analytic import binary_entropy, secret_fraction
from .stochastic import X, Z, RoundLog

__all__ = [
    "DEFAULT_CUTOFF_GRID_NS",
    "RateEstimate",
    "SiftedKeyStats",
    "atom_loss_filter",
    "bernoulli_stderr",
    "bsm_renormalization_factors",
    "duty_cycle_product",
    "equivalent_distance",
    "estimate_cell",
    "mean_trials_estimate",
    "optimize_cutoff",
    "raw_key_export",
    "realtime_yield",
    "renormalize_bsm",
    "secret_rate_estimate",
    "sift",
    "yield_estimate",
]

# log-spaced, dense enough below the photon width to resolve the optimum
DEFAULT_CUTOFF_GRID_NS: tuple[float, ...] = tuple(float(v) for v in np.geomspace(25.0, 1200.0, 12))


def bernoulli_stderr(p: float, k: int) -> float:
    """Standard error of a success fraction ``p`` estimated from ``k`` trials."""
    if k <= 0:
        return 0.0
    return math.sqrt(max(p * (1.0 - p), 0.0) / k)


@dataclass(frozen=True)
class SiftedKeyStats:
    """Sifted-bit counts for one basis.

    For X, ``correlated`` pairs are good bits; for Z, ``anticorrelated`` are.
    Instances add, so partial statistics from separate blocks can be merged.
    """

    basis: int
    correlated: int = 0
    anticorrelated: int = 0

    @classmethod
    def empty(cls, basis: int) -> SiftedKeyStats:
        return cls(basis)

    @property
    def bits_total(self) -> int:
        return self.correlated + self.anticorrelated

    @property
    def is_empty(self) -> bool:
        return self.bits_total == 0

    @property
    def errors(self) -> int:
        return self.anticorrelated if self.basis == X else self.correlated

    @property
    def qber(self) -> float:
        """Error fraction; NaN when no bits survived sifting."""
        return self.errors / self.bits_total if self.bits_total else math.nan

    @property
    def qber_stderr(self) -> float:
        return bernoulli_stderr(self.qber, self.bits_total) if self.bits_total else math.nan

    def __add__(self, other: SiftedKeyStats) -> SiftedKeyStats:
        if other.basis != self.basis:
            raise ValueError("cannot merge statistics of different bases")
        return SiftedKeyStats(self.basis, self.correlated + other.correlated,
                              self.anticorrelated + other.anticorrelated)


def atom_loss_filter(log: RoundLog, n: int | None = None) -> tuple[RoundLog, float]:
    """Drop rounds whose trial count hit the cap ``n``.

    Returns the filtered log and the retained fraction (1 for an empty log).
    """
    cap = log.max_trials if n is None else n
    keep = np.maximum(log["n_a"], log["n_b"]) < cap
    if len(log) == 0:
        return log, 1.0
    return log.select(keep), float(keep.mean())


def _sift_mask(log: RoundLog, dt_cutoff_ns: float) -> tuple[np.ndarray, np.ndarray]:
    heralded = log["bsm_heralded"]
    in_window = heralded & (log["delta_tau_ns"] <= dt_cutoff_ns)
    return heralded, in_window & (log["alice_basis"] == log["bob_basis"])


def sift(log: RoundLog, dt_cutoff_ns: float, filter_atom_loss: bool = False
         ) -> tuple[SiftedKeyStats, SiftedKeyStats, float]:
    """Sift one (L, n) cell.

    Returns X stats, Z stats and the fraction of BSM heralds inside the
    timing window (0 when nothing heralded).
    """
    if filter_atom_loss:
        log, _ = atom_loss_filter(log)
    heralded, keep = _sift_mask(log, dt_cutoff_ns)
    same = log["alice_bit"] == log["bob_bit"]
    out = []
    for basis in (X, Z):
        sel = keep & (log["alice_basis"] == basis)
        corr = int(np.count_nonzero(sel & same))
        out.append(SiftedKeyStats(basis, corr, int(np.count_nonzero(sel)) - corr))
    n_heralded = int(np.count_nonzero(heralded))
    in_window = int(np.count_nonzero(heralded & (log["delta_tau_ns"] <= dt_cutoff_ns)))
    acceptance = in_window / n_heralded if n_heralded else 0.0
    return out[0], out[1], acceptance


def yield_estimate(log: RoundLog, filter_atom_loss: bool = False) -> tuple[float, float, int]:
    """BSM heralds per channel use with its Bernoulli stderr and the use count."""
    if filter_atom_loss:
        log, _ = atom_loss_filter(log)
    uses = int(log["channel_uses"].sum())
    if uses == 0:
        return 0.0, 0.0, 0
    y = int(np.count_nonzero(log["bsm_heralded"])) / uses
    return y, bernoulli_stderr(y, uses), uses


def mean_trials_estimate(log: RoundLog) -> float:
    """Mean attempts per herald, ``1 / p_click``, from both segments.

    Uses the maximum-likelihood estimate of a geometric law truncated at the
    cap, so it stays unbiased for small cutoffs.
    """
    a_ok, b_ok = log["segment_a_ok"], log["segment_b_ok"]
    successes = int(np.count_nonzero(a_ok)) + int(np.count_nonzero(b_ok))
    attempts = int(log["n_a"].sum()) + int(log["n_b"].sum())
    if successes == 0:
        return math.inf
    # rounds where A failed carry n_b = 0, so B attempts are counted only when made
    return attempts / successes


@dataclass(frozen=True)
class RateEstimate:
    distance_ratio: float
    n_cutoff: int
    yield_per_channel_use: float
    yield_stderr: float
    qber_x: SiftedKeyStats
    qber_z: SiftedKeyStats
    secret_fraction: float
    secret_fraction_stderr: float
    secret_key_rate: float
    secret_key_rate_stderr: float
    bsm_acceptance_fraction: float
    samples: int
    dt_cutoff_ns: float = math.inf
    mean_trials: float = math.nan

    @property
    def zero_rate(self) -> bool:
        return not self.secret_key_rate > 0.0


def _dr_de(e: float, k: int) -> float:
    """d/de of -h(e)/2, with the input clamped away from 0 and 1/2."""
    if k <= 1:
        # one-sided secant over [0, 1/2]; the clamp interval is empty
        return -0.5 * (binary_entropy(0.5) - binary_entropy(0.0)) / 0.5
    lo, hi = 1.0 / (2 * k), 0.5 - 1.0 / (2 * k)
    e = min(max(e, lo), hi)
    return 0.5 * math.log2(e / (1.0 - e))


def secret_rate_estimate(
    stats_x: SiftedKeyStats,
    stats_z: SiftedKeyStats,
    yield_value: float,
    yield_stderr: float,
    acceptance: float,
    acceptance_stderr: float = 0.0,
    f: float = 1.0,
    *,
    distance_ratio: float = math.nan,
    n_cutoff: int = 0,
    samples: int = 0,
    dt_cutoff_ns: float = math.inf,
    mean_trials: float = math.nan,
) -> RateEstimate:
    """Secret fraction and key rate with first-order propagated errors.

    Raises:
        ValueError: if either basis has no sifted bits.
    """
    if stats_x.is_empty or stats_z.is_empty:
        raise ValueError("secret rate needs sifted bits in both bases")
    e_x, e_z = stats_x.qber, stats_z.qber
    r = secret_fraction(e_x, e_z, f)
    g_x = _dr_de(e_x, stats_x.bits_total)
    g_z = f * _dr_de(e_z, stats_z.bits_total)
    r_err = math.hypot(g_x * stats_x.qber_stderr, g_z * stats_z.qber_stderr)

    r_pos = max(r, 0.0)
    skr = yield_value * acceptance * r_pos
    skr_err = math.sqrt(
        (acceptance * r_pos * yield_stderr) ** 2
        + (yield_value * r_pos * acceptance_stderr) ** 2
        + (yield_value * acceptance * r_err) ** 2
    )
    return RateEstimate(
        distance_ratio=distance_ratio, n_cutoff=n_cutoff,
        yield_per_channel_use=yield_value, yield_stderr=yield_stderr,
        qber_x=stats_x, qber_z=stats_z,
        secret_fraction=r, secret_fraction_stderr=r_err,
        secret_key_rate=skr, secret_key_rate_stderr=skr_err,
        bsm_acceptance_fraction=acceptance, samples=samples,
        dt_cutoff_ns=dt_cutoff_ns, mean_trials=mean_trials,
    )


def _zero_estimate(stats_x, stats_z, y, y_err, acceptance, **meta) -> RateEstimate:
    return RateEstimate(
        yield_per_channel_use=y, yield_stderr=y_err, qber_x=stats_x, qber_z=stats_z,
        secret_fraction=math.nan, secret_fraction_stderr=math.nan,
        secret_key_rate=0.0, secret_key_rate_stderr=0.0,
        bsm_acceptance_fraction=acceptance, **meta,
    )


def estimate_cell(
    log: RoundLog,
    dt_cutoff_ns: float,
    distance_ratio: float = math.nan,
    f: float = 1.0,
    filter_atom_loss: bool = False,
) -> RateEstimate:
    """Sift, estimate yield and QBERs, and combine them into a RateEstimate.

    A cell whose sifted key is empty in either basis gets a zero rate with
    NaN secret fraction rather than an exception.
    """
    if filter_atom_loss:
        log, _ = atom_loss_filter(log)
    stats_x, stats_z, acc = sift(log, dt_cutoff_ns)
    y, y_err, _ = yield_estimate(log)
    heralds = int(np.count_nonzero(log["bsm_heralded"]))
    meta = dict(distance_ratio=distance_ratio, n_cutoff=log.max_trials, samples=len(log),
                dt_cutoff_ns=dt_cutoff_ns, mean_trials=mean_trials_estimate(log))
    if stats_x.is_empty or stats_z.is_empty:
        return _zero_estimate(stats_x, stats_z, y, y_err, acc, **meta)
    return secret_rate_estimate(stats_x, stats_z, y, y_err, acc, bernoulli_stderr(acc, heralds), f, **meta)


def optimize_cutoff(
    log: RoundLog,
    grid: Sequence[float] = DEFAULT_CUTOFF_GRID_NS,
    distance_ratio: float = math.nan,
    f: float = 1.0,
    filter_atom_loss: bool = False,
) -> tuple[float, RateEstimate]:
    """Grid cutoff with the largest estimated secret key rate.

    Ties go to the smaller cutoff. If every rate is zero the smallest cutoff
    is returned and its estimate has ``zero_rate`` set.
    """
    cutoffs = sorted(float(c) for c in grid)
    if not cutoffs:
        raise ValueError("cutoff grid is empty")
    best = None
    for c in cutoffs:
        est = estimate_cell(log, c, distance_ratio, f, filter_atom_loss)
        if best is None or est.secret_key_rate > best[1].secret_key_rate:
            best = (c, est)
    return best


def bsm_renormalization_factors(efficiencies: Sequence[float]) -> np.ndarray:
    """``<p_BSM> / p_BSM,L`` for each distance."""
    p = np.asarray(efficiencies, dtype=float)
    if p.size == 0 or np.any(p <= 0):
        raise ValueError("BSM efficiencies must be positive")
    return p.mean() / p


def renormalize_bsm(estimates: Sequence[RateEstimate], efficiencies: Sequence[float]) -> list[RateEstimate]:
    """Rescale yield and key rate so every distance sees the mean BSM efficiency."""
    if len(estimates) != len(efficiencies):
        raise ValueError("one efficiency per estimate is required")
    out = []
    for est, c in zip(estimates, bsm_renormalization_factors(efficiencies)):
        c = float(c)
        out.append(dataclasses.replace(
            est,
            yield_per_channel_use=est.yield_per_channel_use * c, yield_stderr=est.yield_stderr * c,
            secret_key_rate=est.secret_key_rate * c, secret_key_rate_stderr=est.secret_key_rate_stderr * c,
        ))
    return out


def equivalent_distance(mean_trials: float, offset: float = 0.0) -> float:
    """``2 ln<N> - offset`` in units of L_att, floored at zero.

    Raises:
        ValueError: if ``mean_trials < 1``.
    """
    if not mean_trials >= 1.0:
        raise ValueError(f"mean_trials must be >= 1, got {mean_trials}")
    return max(2.0 * math.log(mean_trials) - offset, 0.0)


def realtime_yield(p_bsm_effective: float, sequence_rate_hz: float, duty_cycle: float) -> float:
    """Raw bits per second of wall-clock time."""
    for name, v in (("p_bsm_effective", p_bsm_effective), ("sequence_rate_hz", sequence_rate_hz),
                    ("duty_cycle", duty_cycle)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    return p_bsm_effective * sequence_rate_hz * duty_cycle


def duty_cycle_product(*factors: float) -> float:
    """Overall duty cycle from independent time-fraction factors."""
    return math.prod(factors)


def raw_key_export(log: RoundLog, dt_cutoff_ns: float) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Sifted bit strings per basis as ``{"X": (alice, bob), "Z": (alice, bob)}``.

    Bob's Z bits are inverted so that error-free rounds give identical strings;
    the mismatch fraction then equals the QBER from :func:`sift`.
    """
    _, keep = _sift_mask(log, dt_cutoff_ns)
    out = {}
    for basis, label in ((X, "X"), (Z, "Z")):
        sel = keep & (log["alice_basis"] == basis)
        alice = log["alice_bit"][sel].astype(np.uint8)
        bob = log["bob_bit"][sel].astype(np.uint8)
        if basis == Z:
            bob = 1 - bob
        out[label] = (alice, bob.astype(np.uint8))
    return out
