import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from repeater_qkd.params import (
    EXPERIMENT_DISTANCES,
    ConfigError,
    EfficiencyBudget,
    ScenarioConfig,
    efficiency_budget_product,
    segment_success_prob,
    storage_time,
    validate,
)


def test_defaults_are_valid():
    cfg = ScenarioConfig()
    assert validate(cfg) is cfg
    assert cfg.memory.dephasing_time_ms == 20.0
    assert cfg.detectors.dark_count_prob_per_gate == 1e-5
    assert cfg.bsm.efficiency == 0.0507
    assert cfg.protocol.max_trials == 40
    assert EXPERIMENT_DISTANCES == (0.0, 0.9, 1.8)


def test_decoupling_clock():
    mem = ScenarioConfig().memory
    assert mem.effective_time_per_attempt_us == pytest.approx(33.0)
    assert storage_time(mem, 40) == pytest.approx(40 * 33e-6)
    off = ScenarioConfig().override(**{"memory.decoupling": False}).memory
    assert off.effective_time_per_attempt_us == off.attempt_period_us
    with pytest.raises(ValueError):
        storage_time(mem, -1)


def test_station_dark_prob_two_detectors():
    d = ScenarioConfig().detectors.station_dark_prob
    assert d == pytest.approx(1 - (1 - 1e-5) ** 2, rel=1e-12)


def test_fidelity_derived_qber():
    fid = ScenarioConfig().fidelity
    assert fid.qber_x == pytest.approx(0.075)
    cfg = ScenarioConfig().override(**{"fidelity.misalignment_error": 0.01, "fidelity.base_qber_z": 0.02})
    assert cfg.fidelity.qber_x == pytest.approx(0.075 * 0.99 + 0.01 * 0.925)
    assert cfg.fidelity.qber_z == 0.02


def test_segment_success_prob_values():
    ch = ScenarioConfig().channel
    assert segment_success_prob(ch, 0.0) == 0.2213
    assert segment_success_prob(ch, 2.0) == pytest.approx(0.2213 / math.e)
    with pytest.raises(ValueError):
        segment_success_prob(ch, -0.1)


@given(st.floats(0, 20), st.floats(0, 20))
def test_segment_success_prob_is_half_exponential(a, b):
    ch = ScenarioConfig().channel
    lhs = segment_success_prob(ch, a + b) * ch.base_success_prob
    rhs = segment_success_prob(ch, a) * segment_success_prob(ch, b)
    assert lhs == pytest.approx(rhs, rel=1e-12)
    assert segment_success_prob(ch, a + b) <= segment_success_prob(ch, a)


def test_budget_product_is_rough_crosscheck():
    assert efficiency_budget_product(EfficiencyBudget()) == pytest.approx(0.2632, abs=1e-3)


def test_validate_reports_every_problem():
    bad = ScenarioConfig().override(**{
        "bsm.efficiency": 0.6,
        "memory.dephasing_time_ms": 0.0,
        "protocol.max_trials": 0,
    })
    with pytest.raises(ConfigError) as err:
        validate(bad)
    text = str(err.value)
    assert len(err.value.problems) == 3
    assert "exceeds linear-optics 0.5 bound" in text
    assert "dephasing_time must be positive" in text


@pytest.mark.parametrize("override", [
    {"channel.base_success_prob": 0.0},
    {"detectors.dark_count_prob_per_gate": 0.7},
    {"fidelity.zero_distance_fidelity": 0.4},
    {"protocol.duty_cycle": 1.5},
    {"protocol.error_correction_efficiency": 0.9},
    {"bsm.photon_fwhm_ns": -1.0},
    {"rng_seed": -3},
])
def test_validate_rejects(override):
    with pytest.raises(ConfigError):
        validate(ScenarioConfig().override(**override))


def test_zero_photon_width_allowed():
    validate(ScenarioConfig().override(**{"bsm.photon_fwhm_ns": 0.0}))


def test_with_cutoff_and_override_are_copies():
    cfg = ScenarioConfig()
    assert cfg.with_cutoff(5).protocol.max_trials == 5
    assert cfg.protocol.max_trials == 40
    assert cfg.override(memory__dephasing_time_ms=40.0).memory.dephasing_time_ms == 40.0
