"""Closed-form yield, QBER and secret-key-rate model.

The protocol: atom A retries until Alice heralds (at most ``n`` attempts),
then atom B retries until Bob heralds (at most ``n`` attempts) while atom A
stores its qubit, then a Bell-state measurement swaps the correlation. Trials
are counted with the ``N = max(N_A, N_B)`` convention; an aborted round costs
``n`` channel uses.

Error channels are independent bit flips combined with
:func:`compose_errors`. The Monte Carlo engine in :mod:`repeater_qkd.stochastic`
samples exactly the same channels, so this module is its oracle.
"""
from __future__ import annotations

import dataclasses
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special

from .params import BsmConfig, ScenarioConfig, segment_success_prob

__all__ = [
    "OutlookResult",
    "OutlookScenario",
    "RatePoint",
    "TrialsDistribution",
    "binary_entropy",
    "bsm_window",
    "compose_errors",
    "default_outlook_scenarios",
    "dark_herald_fraction",
    "dephasing_error",
    "direct_transmission_rate",
    "expected_max_trials",
    "herald_probability",
    "outlook_base",
    "outlook_curves",
    "psi_minus_probability",
    "qber_analytic",
    "secret_fraction",
    "secret_key_rate_analytic",
    "trials_distribution",
    "yield_analytic",
]

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


def binary_entropy(p):
    """Binary Shannon entropy in bits, with h(0) = h(1) = 0."""
    arr = np.asarray(p, dtype=float)
    if np.any((arr < 0) | (arr > 1)) or np.any(np.isnan(arr)):
        raise ValueError(f"binary_entropy needs 0 <= p <= 1, got {p}")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -special.xlogy(arr, arr) - special.xlogy(1 - arr, 1 - arr)
    h = h / math.log(2.0)
    return float(h) if h.ndim == 0 else h


def compose_errors(*rates: float) -> float:
    """Flip probability of a chain of independent binary symmetric channels."""
    total = 0.0
    for r in rates:
        total = total * (1.0 - r) + r * (1.0 - total)
    return total


def secret_fraction(e_x: float, e_z: float, f: float = 1.0) -> float:
    """Asymptotic BB84 secret fraction ``(1 - h(e_x) - f h(e_z)) / 2``; not clamped."""
    return 0.5 * (1.0 - binary_entropy(e_x) - f * binary_entropy(e_z))


@dataclass(frozen=True)
class TrialsDistribution:
    """Truncated geometric law: ``pmf[k-1] = P(N = k)`` for k <= n, plus ``fail``."""

    p: float
    n: int
    pmf: np.ndarray
    fail: float

    def total(self) -> float:
        return float(self.pmf.sum() + self.fail)


def _check_trials_args(p: float, n: int) -> None:
    if not 0.0 < p <= 1.0:
        raise ValueError(f"success probability must lie in (0, 1], got {p}")
    if n < 1:
        raise ValueError(f"trial cutoff must be >= 1, got {n}")


def trials_distribution(p: float, n: int) -> TrialsDistribution:
    _check_trials_args(p, n)
    k = np.arange(1, n + 1)
    pmf = p * (1.0 - p) ** (k - 1)
    return TrialsDistribution(p=p, n=n, pmf=pmf, fail=(1.0 - p) ** n)


def _one_minus_q_pow(p: float, m: float) -> float:
    """``1 - (1 - p) ** m`` without cancellation for small p."""
    if p >= 1.0:
        return 1.0 if m > 0 else 0.0
    return -math.expm1(m * math.log1p(-p))


def _expected_uses(p: float, n: int, present: float = 1.0) -> float:
    # sum_{k<n} P(min(max(N_A, N_B), n) > k) with N_B absent w.p. 1 - present
    if p >= 1.0:
        return 1.0 + (n - 1) * (1.0 - present)
    s1 = _one_minus_q_pow(p, n) / p
    s2 = _one_minus_q_pow(p, 2 * n) / (p * (2.0 - p))
    return n * (1.0 - present) + present * (2.0 * s1 - s2)


def expected_max_trials(p: float, n: int) -> float:
    """E[min(max(N_A, N_B), n)] for two i.i.d. geometric trial counts.

    Evaluates ``sum_{k=0}^{n-1} (1 - (1 - (1-p)^k)^2)`` in closed form.
    """
    _check_trials_args(p, n)
    return _expected_uses(p, n)


def herald_probability(config: ScenarioConfig, distance_ratio: float) -> float:
    """Per-attempt click probability at a station: photon or dark count."""
    p = segment_success_prob(config.channel, distance_ratio)
    d = config.detectors.station_dark_prob
    return 1.0 - (1.0 - p) * (1.0 - d)


def dark_herald_fraction(config: ScenarioConfig, distance_ratio: float) -> float:
    """P(herald came from a dark count | herald)."""
    p = segment_success_prob(config.channel, distance_ratio)
    d = config.detectors.station_dark_prob
    return (1.0 - p) * d / herald_probability(config, distance_ratio)


def _mean_decay(p: float, n: int, tau: float) -> float:
    """E[exp(-N tau) | N <= n] for N geometric(p) on 1..n."""
    if tau == 0.0:
        return 1.0
    r = (1.0 - p) * math.exp(-tau)
    num = p * math.exp(-tau) * -math.expm1(n * math.log(r)) / (1.0 - r) if r > 0 else p * math.exp(-tau)
    return num / _one_minus_q_pow(p, n)


def dephasing_error(config: ScenarioConfig, distance_ratio: float) -> tuple[float, float]:
    """Flip probabilities (X, Z) of the stored qubit, averaged over N_B | success.

    Storage lasts ``N_B`` attempts on the decoupling clock. X decays with the
    dephasing time; Z only through the optional residual scattering rate.
    """
    mem = config.memory
    n = config.protocol.max_trials
    p = herald_probability(config, distance_ratio)
    step = mem.effective_time_per_attempt_us * 1e-6
    tau_x = step / (mem.dephasing_time_ms * 1e-3)
    tau_z = step * mem.residual_scattering_rate_hz
    return 0.5 * (1.0 - _mean_decay(p, n, tau_x)), 0.5 * (1.0 - _mean_decay(p, n, tau_z))


def psi_minus_probability(bsm: BsmConfig, delta_tau_ns):
    """Probability that the BSM projected onto Psi- at detection-time difference ``delta_tau_ns``."""
    dt = np.asarray(delta_tau_ns, dtype=float)
    if math.isinf(bsm.indistinguishability_decay_time_ns):
        v = np.full_like(dt, bsm.base_visibility)
    else:
        v = bsm.base_visibility * np.exp(-((dt / bsm.indistinguishability_decay_time_ns) ** bsm.visibility_decay_order))
    out = 0.5 * (1.0 - v)
    return float(out) if out.ndim == 0 else out


def bsm_window(bsm: BsmConfig, dt_cutoff_ns: float | None = None) -> tuple[float, float]:
    """Acceptance fraction and mean Psi- probability for ``delta_tau <= cutoff``.

    Detection times are Gaussian with the configured FWHM, so ``delta_tau`` is
    half-normal with scale ``sqrt(2) * sigma``.
    """
    cutoff = bsm.dt_cutoff_ns if dt_cutoff_ns is None else dt_cutoff_ns
    sigma = bsm.photon_fwhm_ns * FWHM_TO_SIGMA
    if sigma == 0.0:
        return 1.0, psi_minus_probability(bsm, 0.0)
    scale = math.sqrt(2.0) * sigma
    acceptance = float(special.erf(cutoff / (scale * math.sqrt(2.0))))
    if math.isinf(bsm.indistinguishability_decay_time_ns) or acceptance == 0.0:
        return acceptance, psi_minus_probability(bsm, 0.0)

    def integrand(t: float) -> float:
        density = math.sqrt(2.0 / math.pi) / scale * math.exp(-0.5 * (t / scale) ** 2)
        return density * psi_minus_probability(bsm, t)

    upper = min(cutoff, 12.0 * scale)
    tau_c = bsm.indistinguishability_decay_time_ns
    pts = [x for x in (0.5 * tau_c, tau_c, 2.0 * tau_c) if x < upper]
    mass, _ = integrate.quad(integrand, 0.0, upper, points=pts or None, limit=200, epsabs=1e-13, epsrel=1e-11)
    return acceptance, mass / acceptance


def yield_analytic(config: ScenarioConfig, distance_ratio: float, denominator: str = "all_rounds") -> float:
    """Raw bits (BSM heralds) per channel use.

    ``denominator="all_rounds"`` divides by the expected channel uses of every
    round, aborted ones included; ``"successful_rounds"`` divides by the
    expected uses of rounds in which both segments succeeded.
    """
    n = config.protocol.max_trials
    present = config.protocol.atom_present_prob
    p = herald_probability(config, distance_ratio)
    both = present * _one_minus_q_pow(p, n) ** 2
    if denominator == "all_rounds":
        return config.bsm.efficiency * both / _expected_uses(p, n, present)
    if denominator == "successful_rounds":
        # sum_{k<n} P(max > k | both <= n)
        norm = _one_minus_q_pow(p, n)
        k = np.arange(n)
        cdf = -np.expm1(k * math.log1p(-p)) / norm if p < 1 else np.ones(n)
        return config.bsm.efficiency / float(np.sum(1.0 - cdf**2))
    raise ValueError(f"unknown denominator convention {denominator!r}")


def qber_analytic(config: ScenarioConfig, distance_ratio: float) -> tuple[float, float]:
    """(e_X, e_Z) of sifted bits inside the configured delta-tau window."""
    deph_x, deph_z = dephasing_error(config, distance_ratio)
    q = dark_herald_fraction(config, distance_ratio)
    # a dark herald randomizes that station's bit
    dark = compose_errors(0.5 * q, 0.5 * q)
    _, psi_minus = bsm_window(config.bsm)
    fid = config.fidelity
    e_x = compose_errors(fid.qber_x, deph_x, dark, psi_minus)
    e_z = compose_errors(fid.qber_z, deph_z, dark)
    return e_x, e_z


@dataclass(frozen=True)
class RatePoint:
    distance_ratio: float
    yield_per_channel_use: float
    qber_x: float
    qber_z: float
    secret_fraction: float
    secret_key_rate: float
    bsm_acceptance_fraction: float = 1.0
    mean_trials: float = float("nan")
    n_cutoff: int = 0


def secret_key_rate_analytic(config: ScenarioConfig, distance_ratio: float, denominator: str = "all_rounds") -> RatePoint:
    y = yield_analytic(config, distance_ratio, denominator)
    e_x, e_z = qber_analytic(config, distance_ratio)
    r = secret_fraction(e_x, e_z, config.protocol.error_correction_efficiency)
    acceptance, _ = bsm_window(config.bsm)
    return RatePoint(
        distance_ratio=distance_ratio,
        yield_per_channel_use=y,
        qber_x=e_x,
        qber_z=e_z,
        secret_fraction=r,
        secret_key_rate=y * acceptance * max(r, 0.0),
        bsm_acceptance_fraction=acceptance,
        mean_trials=1.0 / herald_probability(config, distance_ratio),
        n_cutoff=config.protocol.max_trials,
    )


def direct_transmission_rate(config: ScenarioConfig, distance_ratio: float, ideal: bool = False) -> RatePoint:
    """Prepare-and-measure BB84 over the full link with the same efficiencies.

    ``ideal=True`` drops dark counts and misalignment, leaving pure loss.
    """
    if distance_ratio < 0:
        raise ValueError("distance_ratio must be >= 0")
    x = config.channel.base_success_prob * math.exp(-distance_ratio)
    d = 0.0 if ideal else config.detectors.station_dark_prob
    click = 1.0 - (1.0 - x) * (1.0 - d)
    dark_fraction = (1.0 - x) * d / click
    base = 0.0 if ideal else config.fidelity.misalignment_error
    e = compose_errors(base, 0.5 * dark_fraction)
    r = secret_fraction(e, e, config.protocol.error_correction_efficiency)
    return RatePoint(
        distance_ratio=distance_ratio,
        yield_per_channel_use=click,
        qber_x=e,
        qber_z=e,
        secret_fraction=r,
        secret_key_rate=click * max(r, 0.0),
        mean_trials=1.0 / click,
    )


# ---------------------------------------------------------------------------
# outlook


@dataclass(frozen=True)
class OutlookScenario:
    label: str
    overrides: Mapping[str, object] = field(default_factory=dict)


def outlook_base(config: ScenarioConfig) -> ScenarioConfig:
    """Projection model: p_BSM and F describe the whole BSM, no timing selection."""
    bsm = dataclasses.replace(config.bsm, indistinguishability_decay_time_ns=math.inf, dt_cutoff_ns=math.inf)
    return dataclasses.replace(config, bsm=bsm)


def default_outlook_scenarios(config: ScenarioConfig | None = None) -> list[OutlookScenario]:
    cfg = config or ScenarioConfig()
    return [
        OutlookScenario("memory", {"memory.dephasing_time_ms": 2.0 * cfg.memory.dephasing_time_ms}),
        OutlookScenario("bsm", {"bsm.efficiency": 0.10}),
        OutlookScenario("fidelity", {"fidelity.zero_distance_fidelity": cfg.fidelity.zero_distance_fidelity + 0.02}),
    ]


OUTLOOK_CUTOFF_GRID: tuple[int, ...] = tuple(int(v) for v in np.unique(np.round(np.geomspace(1, 5000, 80))))
DEFAULT_OUTLOOK_GRID: tuple[float, ...] = tuple(float(v) for v in np.round(np.arange(0.0, 7.5 + 1e-9, 0.05), 10))


def _best_over_cutoffs(config: ScenarioConfig, distance_ratio: float, cutoffs: Sequence[int]) -> RatePoint:
    best: RatePoint | None = None
    for n in cutoffs:
        point = secret_key_rate_analytic(config.with_cutoff(n), distance_ratio)
        if best is None or point.secret_key_rate > best.secret_key_rate:
            best = point
    assert best is not None
    return best


@dataclass
class OutlookResult:
    distances: list[float]
    curves: dict[str, list[RatePoint]]
    direct: list[RatePoint]
    mean_trials: list[float]
    crossovers: dict[str, float | None]


def _crossover(rep, direct, distances: Sequence[float]) -> tuple[float, float] | None:
    diffs = [r.secret_key_rate - d.secret_key_rate for r, d in zip(rep, direct)]
    for i in range(1, len(diffs)):
        if diffs[i - 1] < 0.0 <= diffs[i]:
            return distances[i - 1], distances[i]
    return None


def outlook_curves(
    base: ScenarioConfig,
    scenarios: Sequence[OutlookScenario],
    distances: Sequence[float] = DEFAULT_OUTLOOK_GRID,
    cutoffs: Sequence[int] = OUTLOOK_CUTOFF_GRID,
) -> OutlookResult:
    """Secret key rate per scenario against the direct-transmission baseline.

    Each repeater point uses the best trial cutoff from ``cutoffs``. With two
    or more scenarios a ``combined`` curve applies all overrides at once.
    Crossovers are the first distance at which the repeater rate reaches the
    direct rate, refined by root finding between grid points.
    """
    root = outlook_base(base)
    configs = {"current": root}
    for sc in scenarios:
        configs[sc.label] = root.override(**dict(sc.overrides))
    if len(scenarios) >= 2:
        merged: dict[str, object] = {}
        for sc in scenarios:
            merged.update(sc.overrides)
        configs["combined"] = root.override(**merged)

    dist = [float(x) for x in distances]
    direct = [direct_transmission_rate(root, x) for x in dist]
    curves = {label: [_best_over_cutoffs(cfg, x, cutoffs) for x in dist] for label, cfg in configs.items()}

    crossovers: dict[str, float | None] = {}
    for label, cfg in configs.items():
        bracket = _crossover(curves[label], direct, dist)
        if bracket is None:
            crossovers[label] = None
            continue

        def gap(x: float, cfg=cfg) -> float:
            return _best_over_cutoffs(cfg, x, cutoffs).secret_key_rate - direct_transmission_rate(root, x).secret_key_rate

        lo, hi = bracket
        crossovers[label] = float(optimize.brentq(gap, lo, hi, xtol=1e-6)) if gap(lo) < 0 < gap(hi) else hi
    return OutlookResult(
        distances=dist,
        curves=curves,
        direct=direct,
        mean_trials=[1.0 / herald_probability(root, x) for x in dist],
        crossovers=crossovers,
    )
