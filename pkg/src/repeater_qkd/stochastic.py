"""Trial-level Monte Carlo of the repeater protocol.

Two execution paths share one model:

* :func:`run_attempt` / :func:`run_round` step through every entanglement
  attempt with scalar draws. They are the readable reference.
* :func:`simulate_block` draws whole blocks of rounds at once (the number of
  attempts until the first click is geometric), and :func:`run_campaign`
  stitches blocks together. This is the path used for sweeps.

Every block gets its own Philox stream keyed by ``(seed, block_index)``, so a
campaign is bit-identical for a given seed whatever the worker count.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .analytic import FWHM_TO_SIGMA, psi_minus_probability
from .params import BsmConfig, ScenarioConfig, segment_success_prob, storage_time

__all__ = [
    "AttemptResult",
    "CampaignSummary",
    "PSI_MINUS",
    "PSI_PLUS",
    "RoundLog",
    "RoundRecord",
    "X",
    "Z",
    "block_rng",
    "loss_gating",
    "run_attempt",
    "run_campaign",
    "run_round",
    "sample_delta_tau",
    "simulate_block",
]

Z, X = 0, 1
PSI_PLUS, PSI_MINUS = 0, 1
BLOCK_SIZE = 1 << 16
# dark counts are uniform over the 0.5 us detector gate
GATE_NS = 500.0


@dataclass(frozen=True)
class AttemptResult:
    heralded: bool
    herald_kind: str | None = None  # "photon" or "dark"
    detection_time_ns: float | None = None  # relative to the gate centre


def loss_gating(rng: np.random.Generator, distance_ratio: float) -> bool:
    """Biased coin that emulates one arm's fiber loss on station detection.

    Passes with probability ``exp(-L / (2 L_att))``. The BSM never sees it.
    """
    return bool(rng.random() < math.exp(-0.5 * distance_ratio))


def run_attempt(config: ScenarioConfig, distance_ratio: float, rng: np.random.Generator) -> AttemptResult:
    photon = bool(rng.random() < config.channel.base_success_prob) & loss_gating(rng, distance_ratio)
    dark = bool(rng.random() < config.detectors.station_dark_prob)
    if photon:
        sigma = config.bsm.photon_fwhm_ns * FWHM_TO_SIGMA
        return AttemptResult(True, "photon", float(rng.normal(0.0, sigma)) if sigma else 0.0)
    if dark:
        return AttemptResult(True, "dark", float(rng.uniform(-0.5 * GATE_NS, 0.5 * GATE_NS)))
    return AttemptResult(False)


def sample_delta_tau(bsm: BsmConfig, rng: np.random.Generator, size: int | None = None):
    """|t1 - t2| for two detection times drawn from the Gaussian photon envelope."""
    sigma = bsm.photon_fwhm_ns * FWHM_TO_SIGMA
    t1 = rng.standard_normal(size)
    t2 = rng.standard_normal(size)
    return np.abs(t1 - t2) * sigma


@dataclass(frozen=True)
class RoundRecord:
    n_a: int
    n_b: int
    segment_a_ok: bool
    segment_b_ok: bool
    alice_basis: int
    bob_basis: int
    alice_bit: int
    bob_bit: int
    alice_dark: bool
    bob_dark: bool
    bsm_heralded: bool
    heralded_state: int
    delta_tau_ns: float
    storage_time_a_s: float
    channel_uses: int


def _flip_probs(config: ScenarioConfig, basis, storage_s):
    fid = config.fidelity
    base = np.where(basis == X, fid.qber_x, fid.qber_z)
    t2 = config.memory.dephasing_time_ms * 1e-3
    gamma = config.memory.residual_scattering_rate_hz
    store = np.where(basis == X, -0.5 * np.expm1(-storage_s / t2), -0.5 * np.expm1(-storage_s * gamma))
    return base, store


def _correlate(config, alice_basis, bob_basis, alice_bit, state, storage_s, u_base, u_store, u_free):
    """Bob's bit before dark-count randomization.

    Matching bases follow the Psi+/Psi- correlation table (X: Psi+ correlated,
    Psi- anti-correlated; Z: always anti-correlated), then independent flips.
    """
    matched = alice_basis == bob_basis
    same = (alice_basis == X) & (state == PSI_PLUS)
    ideal = np.where(same, alice_bit, 1 - alice_bit)
    p_base, p_store = _flip_probs(config, alice_basis, storage_s)
    flips = (u_base < p_base) ^ (u_store < p_store)
    return np.where(matched, ideal ^ flips, u_free).astype(np.uint8)


def run_round(config: ScenarioConfig, distance_ratio: float, rng: np.random.Generator) -> RoundRecord:
    """One protocol round with attempt-by-attempt sampling."""
    n = config.protocol.max_trials
    a = None
    n_a = n
    for attempt in range(1, n + 1):
        res = run_attempt(config, distance_ratio, rng)
        if res.heralded:
            a, n_a = res, attempt
            break
    if a is None:
        return RoundRecord(n, 0, False, False, Z, Z, 0, 0, False, False, False, PSI_PLUS, math.nan, 0.0, n)

    present = bool(rng.random() < config.protocol.atom_present_prob)
    b = None
    n_b = n
    for attempt in range(1, n + 1):
        res = run_attempt(config, distance_ratio, rng) if present else AttemptResult(False)
        if res.heralded:
            b, n_b = res, attempt
            break
    t_store = storage_time(config.memory, n_b)
    if b is None:
        return RoundRecord(n_a, n, True, False, Z, Z, 0, 0, a.herald_kind == "dark", False, False, PSI_PLUS, math.nan, t_store, n)

    uses = max(n_a, n_b)
    alice_basis, bob_basis = int(rng.integers(2)), int(rng.integers(2))
    alice_bit = int(rng.integers(2))
    if not rng.random() < config.bsm.efficiency:
        return RoundRecord(n_a, n_b, True, True, alice_basis, bob_basis, alice_bit, 0,
                           a.herald_kind == "dark", b.herald_kind == "dark", False, PSI_PLUS, math.nan, t_store, uses)

    dt = float(sample_delta_tau(config.bsm, rng))
    state = PSI_MINUS if rng.random() < psi_minus_probability(config.bsm, dt) else PSI_PLUS
    bob_bit = int(_correlate(config, np.array(alice_basis), np.array(bob_basis), np.array(alice_bit),
                             np.array(state), t_store, rng.random(), rng.random(), rng.integers(2)))
    if a.herald_kind == "dark":
        alice_bit = int(rng.integers(2))
    if b.herald_kind == "dark":
        bob_bit = int(rng.integers(2))
    return RoundRecord(n_a, n_b, True, True, alice_basis, bob_basis, alice_bit, bob_bit,
                       a.herald_kind == "dark", b.herald_kind == "dark", True, state, dt, t_store, uses)


# ---------------------------------------------------------------------------
# vectorized path

_COLUMNS = [f.name for f in fields(RoundRecord)]
_DTYPES = {
    "n_a": np.int32, "n_b": np.int32, "segment_a_ok": bool, "segment_b_ok": bool,
    "alice_basis": np.uint8, "bob_basis": np.uint8, "alice_bit": np.uint8, "bob_bit": np.uint8,
    "alice_dark": bool, "bob_dark": bool, "bsm_heralded": bool, "heralded_state": np.uint8,
    "delta_tau_ns": np.float64, "storage_time_a_s": np.float64, "channel_uses": np.int32,
}


@dataclass
class RoundLog:
    """Column-oriented event log; one entry per protocol round."""

    columns: dict[str, np.ndarray]
    max_trials: int

    def __len__(self) -> int:
        return len(self.columns["n_a"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def select(self, mask: np.ndarray) -> RoundLog:
        return RoundLog({k: v[mask] for k, v in self.columns.items()}, self.max_trials)

    @classmethod
    def concat(cls, logs: list[RoundLog]) -> RoundLog:
        if not logs:
            raise ValueError("nothing to concatenate")
        return cls({k: np.concatenate([lg.columns[k] for lg in logs]) for k in _COLUMNS}, logs[0].max_trials)

    @classmethod
    def from_records(cls, records: list[RoundRecord], max_trials: int) -> RoundLog:
        cols = {k: np.array([getattr(r, k) for r in records], dtype=_DTYPES[k]) for k in _COLUMNS}
        return cls(cols, max_trials)

    def to_records(self) -> list[RoundRecord]:
        py = {k: v.tolist() for k, v in self.columns.items()}
        return [RoundRecord(**{k: py[k][i] for k in _COLUMNS}) for i in range(len(self))]

    def write(self, path: str | Path) -> None:
        """Tab-separated, one round per line, columns in :class:`RoundRecord` order."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(_COLUMNS)
            cols = [
                [repr(v) for v in self.columns[k].tolist()] if _DTYPES[k] is np.float64
                else self.columns[k].astype(np.int64).tolist()
                for k in _COLUMNS
            ]
            w.writerows(zip(*cols))

    @classmethod
    def read(cls, path: str | Path, max_trials: int) -> RoundLog:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh, delimiter="\t"))
        header, body = rows[0], rows[1:]
        if header != _COLUMNS:
            raise ValueError(f"unexpected round-log header {header}")
        data = list(zip(*body)) if body else [[] for _ in _COLUMNS]
        cols = {}
        for k, vals in zip(_COLUMNS, data):
            dtype = _DTYPES[k]
            cols[k] = np.array([float(v) for v in vals], dtype=np.float64) if dtype is np.float64 \
                else np.array([int(v) for v in vals], dtype=dtype)
        return cls(cols, max_trials)


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def simulate_block(config: ScenarioConfig, distance_ratio: float, size: int, rng: np.random.Generator) -> RoundLog:
    """Draw ``size`` independent rounds. Draw order is fixed, used or not."""
    n = config.protocol.max_trials
    p = segment_success_prob(config.channel, distance_ratio)
    d = config.detectors.station_dark_prob
    click = 1.0 - (1.0 - p) * (1.0 - d)
    if click <= 0.0:
        raise ValueError("herald probability underflows to zero at this distance")
    dark_given_click = (1.0 - p) * d / click

    n_a = rng.geometric(click, size)
    n_b = rng.geometric(click, size)
    present = rng.random(size) < config.protocol.atom_present_prob
    alice_dark = rng.random(size) < dark_given_click
    bob_dark = rng.random(size) < dark_given_click
    u_bsm = rng.random(size)
    delta_tau = sample_delta_tau(config.bsm, rng, size)
    u_state = rng.random(size)
    alice_basis = rng.integers(0, 2, size, dtype=np.uint8)
    bob_basis = rng.integers(0, 2, size, dtype=np.uint8)
    alice_bit = rng.integers(0, 2, size, dtype=np.uint8)
    u_base = rng.random(size)
    u_store = rng.random(size)
    u_free = rng.integers(0, 2, size, dtype=np.uint8)
    alice_rand = rng.integers(0, 2, size, dtype=np.uint8)
    bob_rand = rng.integers(0, 2, size, dtype=np.uint8)

    a_ok = n_a <= n
    b_ok = a_ok & present & (n_b <= n)
    n_a = np.minimum(n_a, n)
    n_b = np.where(a_ok, np.where(present, np.minimum(n_b, n), n), 0)
    uses = np.where(b_ok, np.maximum(n_a, n_b), n)
    bsm = b_ok & (u_bsm < config.bsm.efficiency)
    delta_tau = np.where(bsm, delta_tau, np.nan)
    state = (bsm & (u_state < psi_minus_probability(config.bsm, np.nan_to_num(delta_tau)))).astype(np.uint8)
    t_store = n_b * (config.memory.effective_time_per_attempt_us * 1e-6)

    bob_bit = _correlate(config, alice_basis, bob_basis, alice_bit, state, t_store, u_base, u_store, u_free)
    alice_dark &= a_ok
    bob_dark &= b_ok
    alice_bit = np.where(alice_dark, alice_rand, alice_bit).astype(np.uint8)
    bob_bit = np.where(bob_dark, bob_rand, bob_bit).astype(np.uint8)

    cols = {
        "n_a": n_a, "n_b": n_b, "segment_a_ok": a_ok, "segment_b_ok": b_ok,
        "alice_basis": alice_basis, "bob_basis": bob_basis, "alice_bit": alice_bit, "bob_bit": bob_bit,
        "alice_dark": alice_dark, "bob_dark": bob_dark, "bsm_heralded": bsm, "heralded_state": state,
        "delta_tau_ns": delta_tau, "storage_time_a_s": t_store, "channel_uses": uses,
    }
    return RoundLog({k: np.asarray(v, dtype=_DTYPES[k]) for k, v in cols.items()}, n)


@dataclass
class CampaignSummary:
    rounds: int
    records: RoundLog
    realtime_estimate: float  # raw bits per second of wall-clock time
    distance_ratio: float
    seed: int
    truncated: bool = False


def _block_job(args):
    config, distance_ratio, size, seed, index = args
    return simulate_block(config, distance_ratio, size, block_rng(seed, index))


def default_workers() -> int:
    env = os.environ.get("REPEATER_QKD_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_campaign(
    config: ScenarioConfig,
    distance_ratio: float,
    rounds: int,
    rng_seed: int | None = None,
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
) -> CampaignSummary:
    """Simulate ``rounds`` protocol rounds at one distance.

    The output depends only on the configuration, the seed and ``block_size``.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    seed = config.rng_seed if rng_seed is None else int(rng_seed)
    jobs = []
    for index, start in enumerate(range(0, rounds, block_size)):
        jobs.append((config, distance_ratio, min(block_size, rounds - start), seed, index))

    logs: list[RoundLog] = []
    truncated = False
    try:
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                logs = list(pool.map(_block_job, jobs))
        else:
            for job in jobs:
                logs.append(_block_job(job))
    except MemoryError:
        truncated = True
    if not logs:
        raise MemoryError("no block of the campaign could be simulated")

    log = RoundLog.concat(logs)
    done = len(log)
    heralds = int(log["bsm_heralded"].sum())
    proto = config.protocol
    # raw bits per attempt x attempt rate x duty cycle
    realtime = heralds / int(log["channel_uses"].sum()) * proto.sequence_rate_hz * proto.duty_cycle
    return CampaignSummary(rounds=done, records=log, realtime_estimate=realtime,
                           distance_ratio=distance_ratio, seed=seed, truncated=truncated)
