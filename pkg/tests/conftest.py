import numpy as np
import pytest
from hypothesis import settings

from repeater_qkd.stochastic import PSI_PLUS, X, Z, RoundLog, _DTYPES

settings.register_profile("repo", deadline=None, max_examples=60)
settings.load_profile("repo")

ACCEPTANCE_LINES: dict[int, str] = {}


def make_log(
    n_rounds: int,
    qber_x: float = 0.0,
    qber_z: float = 0.0,
    seed: int = 0,
    max_trials: int = 1,
    delta_tau=None,
    heralded: float = 1.0,
) -> RoundLog:
    """Synthetic round log with matched bases and injected per-basis error rates.

    Every round uses one channel use. Bits follow the expected correlation
    (X correlated, Z anti-correlated) and are flipped with the given rate.
    """
    rng = np.random.default_rng(seed)
    basis = rng.integers(0, 2, n_rounds).astype(np.uint8)
    alice = rng.integers(0, 2, n_rounds).astype(np.uint8)
    err = np.where(basis == X, qber_x, qber_z)
    flip = rng.random(n_rounds) < err
    ideal = np.where(basis == Z, 1 - alice, alice)
    bob = (ideal ^ flip).astype(np.uint8)
    bsm = rng.random(n_rounds) < heralded
    dt = np.zeros(n_rounds) if delta_tau is None else np.asarray(delta_tau, dtype=float)
    cols = {
        "n_a": np.ones(n_rounds), "n_b": np.ones(n_rounds),
        "segment_a_ok": np.ones(n_rounds, bool), "segment_b_ok": np.ones(n_rounds, bool),
        "alice_basis": basis, "bob_basis": basis, "alice_bit": alice, "bob_bit": bob,
        "alice_dark": np.zeros(n_rounds, bool), "bob_dark": np.zeros(n_rounds, bool),
        "bsm_heralded": bsm, "heralded_state": np.full(n_rounds, PSI_PLUS),
        "delta_tau_ns": np.where(bsm, dt, np.nan), "storage_time_a_s": np.zeros(n_rounds),
        "channel_uses": np.ones(n_rounds),
    }
    return RoundLog({k: np.asarray(v, dtype=_DTYPES[k]) for k, v in cols.items()}, max_trials)


@pytest.fixture
def synthetic_log():
    return make_log


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[num])
