"""Scenario parameters for the two-memory repeater node.

All configuration objects are frozen dataclasses. Construction does not
check invariants; call :func:`validate` to get either the same object back
or a :class:`ConfigError` listing every violated invariant.

Durations carry their unit in the field name (``_ms``, ``_us``, ``_ns``) so
that the configuration file can round-trip values bit-exactly. Distances are
always the dimensionless ratio ``L / L_att``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

__all__ = [
    "BsmConfig",
    "ChannelConfig",
    "ConfigError",
    "DetectorConfig",
    "EfficiencyBudget",
    "FidelityConfig",
    "MemoryConfig",
    "EXPERIMENT_DISTANCES",
    "ProtocolConfig",
    "ScenarioConfig",
    "efficiency_budget_product",
    "segment_success_prob",
    "storage_time",
    "validate",
]

# Equivalent distances used for the three-point reproductions. Each arm of the
# experiment is limited to 0.9 L_att by the heralding wait, so the full link
# spans at most 1.8 L_att.
EXPERIMENT_DISTANCES: tuple[float, ...] = (0.0, 0.9, 1.8)


class ConfigError(ValueError):
    """Raised by :func:`validate`; ``problems`` holds one message per violation."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid scenario configuration:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class ChannelConfig:
    attenuation_length_km: float = 1.1
    # combined source + link + detector efficiency with no added loss
    base_success_prob: float = 0.2213
    # 0 selects calibration against the first grid distance
    equivalent_distance_offset: float = 0.0


@dataclass(frozen=True)
class EfficiencyBudget:
    """Individually measured efficiencies whose product roughly matches
    ``ChannelConfig.base_success_prob``."""

    atom_init: float = 0.66
    photon_generation: float = 0.69
    fiber_and_optics: float = 0.85
    detection: float = 0.68


@dataclass(frozen=True)
class MemoryConfig:
    dephasing_time_ms: float = 20.0
    attempt_period_us: float = 20.0
    preparation_time_us: float = 10.0
    dd_block_attempts: int = 3
    dd_pulse_interval_us: float = 99.0
    decoupling: bool = True
    # Z-basis decay from off-resonant Raman scattering; off by default
    residual_scattering_rate_hz: float = 0.0

    @property
    def effective_time_per_attempt_us(self) -> float:
        """Clock per attempt while atom A holds its qubit."""
        if self.decoupling:
            return self.dd_pulse_interval_us / self.dd_block_attempts
        return self.attempt_period_us


@dataclass(frozen=True)
class DetectorConfig:
    dark_count_prob_per_gate: float = 1e-5
    detectors_per_station: int = 2

    @property
    def station_dark_prob(self) -> float:
        """Probability that at least one detector of a station fires in a gate."""
        return -math.expm1(self.detectors_per_station * math.log1p(-self.dark_count_prob_per_gate))


@dataclass(frozen=True)
class BsmConfig:
    efficiency: float = 0.0507
    photon_fwhm_ns: float = 300.0
    indistinguishability_decay_time_ns: float = 66.0
    # stretch exponent k of v(dt) = v0 * exp(-(dt / tau_c) ** k)
    visibility_decay_order: float = 8.0
    base_visibility: float = 1.0
    dt_cutoff_ns: float = 50.0


@dataclass(frozen=True)
class FidelityConfig:
    zero_distance_fidelity: float = 0.925
    misalignment_error: float = 0.0
    # per-basis overrides; None derives the value from the two fields above
    base_qber_x: float | None = None
    base_qber_z: float | None = None

    def _derived(self) -> float:
        e = 1.0 - self.zero_distance_fidelity
        m = self.misalignment_error
        return e * (1.0 - m) + m * (1.0 - e)

    @property
    def qber_x(self) -> float:
        return self._derived() if self.base_qber_x is None else self.base_qber_x

    @property
    def qber_z(self) -> float:
        return self._derived() if self.base_qber_z is None else self.base_qber_z


@dataclass(frozen=True)
class ProtocolConfig:
    max_trials: int = 40
    sequence_rate_hz: float = 160.0
    duty_cycle: float = 0.07
    error_correction_efficiency: float = 1.0
    # < 1 reproduces the atom-loss spike at the trial cap
    atom_present_prob: float = 1.0


@dataclass(frozen=True)
class ScenarioConfig:
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    detectors: DetectorConfig = field(default_factory=DetectorConfig)
    bsm: BsmConfig = field(default_factory=BsmConfig)
    fidelity: FidelityConfig = field(default_factory=FidelityConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    rng_seed: int = 20211

    def with_cutoff(self, n: int) -> ScenarioConfig:
        return dataclasses.replace(self, protocol=dataclasses.replace(self.protocol, max_trials=int(n)))

    def override(self, **dotted: object) -> ScenarioConfig:
        """Return a copy with ``section__field=value`` or ``{"section.field": value}`` replaced.

        >>> ScenarioConfig().override(**{"memory.dephasing_time_ms": 40.0}).memory.dephasing_time_ms
        40.0
        """
        cfg = self
        for key, value in dotted.items():
            section, _, name = key.replace("__", ".").partition(".")
            if not name:
                cfg = dataclasses.replace(cfg, **{section: value})
                continue
            sub = getattr(cfg, section)
            cfg = dataclasses.replace(cfg, **{section: dataclasses.replace(sub, **{name: value})})
        return cfg


def segment_success_prob(channel: ChannelConfig, distance_ratio: float) -> float:
    """Single-attempt photon transmission probability over one half-link.

    Each arm spans ``L / 2``, so the probability is ``p0 * exp(-L / (2 L_att))``.
    """
    if distance_ratio < 0 or math.isnan(distance_ratio):
        raise ValueError(f"distance_ratio must be >= 0, got {distance_ratio}")
    return channel.base_success_prob * math.exp(-0.5 * distance_ratio)


def efficiency_budget_product(budget: EfficiencyBudget) -> float:
    """Product of the individual efficiencies.

    Only an approximate cross-check of ``base_success_prob``; the measured
    value (0.2213) and the product (0.263) are not expected to agree exactly.
    """
    return budget.atom_init * budget.photon_generation * budget.fiber_and_optics * budget.detection


def storage_time(memory: MemoryConfig, attempts_elapsed: int) -> float:
    """Seconds elapsed after ``attempts_elapsed`` attempts on the storage clock."""
    if attempts_elapsed < 0:
        raise ValueError("attempts_elapsed must be >= 0")
    return attempts_elapsed * memory.effective_time_per_attempt_us * 1e-6


def _check_prob(problems: list[str], name: str, value: float, *, low_open: bool = False) -> None:
    if not isinstance(value, (int, float)) or math.isnan(value):
        problems.append(f"{name} must be a number, got {value!r}")
    elif low_open and not 0.0 < value <= 1.0:
        problems.append(f"{name} must lie in (0, 1], got {value}")
    elif not low_open and not 0.0 <= value <= 1.0:
        problems.append(f"{name} must lie in [0, 1], got {value}")


def validate(config: ScenarioConfig) -> ScenarioConfig:
    """Return ``config`` unchanged if every invariant holds, else raise ConfigError."""
    problems: list[str] = []

    ch = config.channel
    if not ch.attenuation_length_km > 0:
        problems.append("channel.attenuation_length_km must be positive")
    _check_prob(problems, "channel.base_success_prob", ch.base_success_prob, low_open=True)
    if not ch.equivalent_distance_offset >= 0:
        problems.append("channel.equivalent_distance_offset must be >= 0")

    mem = config.memory
    if not mem.dephasing_time_ms > 0:
        problems.append("memory.dephasing_time_ms: dephasing_time must be positive")
    if not mem.attempt_period_us > 0:
        problems.append("memory.attempt_period_us must be positive")
    if not 0 <= mem.preparation_time_us <= mem.attempt_period_us:
        problems.append("memory.preparation_time_us must lie in [0, attempt_period_us]")
    if not (isinstance(mem.dd_block_attempts, int) and mem.dd_block_attempts >= 1):
        problems.append("memory.dd_block_attempts must be an integer >= 1")
    elif not mem.dd_pulse_interval_us > 0:
        problems.append("memory.dd_pulse_interval_us must be positive")
    elif mem.effective_time_per_attempt_us < mem.attempt_period_us:
        problems.append("memory: effective time per attempt must be >= attempt_period_us")
    if not mem.residual_scattering_rate_hz >= 0:
        problems.append("memory.residual_scattering_rate_hz must be >= 0")

    det = config.detectors
    if not 0.0 <= det.dark_count_prob_per_gate < 0.5:
        problems.append("detectors.dark_count_prob_per_gate must lie in [0, 0.5)")
    if not (isinstance(det.detectors_per_station, int) and det.detectors_per_station >= 1):
        problems.append("detectors.detectors_per_station must be an integer >= 1")

    bsm = config.bsm
    if not 0.0 < bsm.efficiency <= 0.5:
        if bsm.efficiency > 0.5:
            problems.append(f"bsm.efficiency {bsm.efficiency} exceeds linear-optics 0.5 bound")
        else:
            problems.append("bsm.efficiency must be positive")
    if not bsm.photon_fwhm_ns >= 0:
        problems.append("bsm.photon_fwhm_ns must be >= 0")
    if not bsm.indistinguishability_decay_time_ns > 0:
        problems.append("bsm.indistinguishability_decay_time_ns must be positive")
    if not bsm.visibility_decay_order > 0:
        problems.append("bsm.visibility_decay_order must be positive")
    _check_prob(problems, "bsm.base_visibility", bsm.base_visibility)
    if not bsm.dt_cutoff_ns >= 0:
        problems.append("bsm.dt_cutoff_ns must be >= 0")

    fid = config.fidelity
    if not 0.5 < fid.zero_distance_fidelity <= 1.0:
        problems.append("fidelity.zero_distance_fidelity must lie in (0.5, 1]")
    if not 0.0 <= fid.misalignment_error < 0.5:
        problems.append("fidelity.misalignment_error must lie in [0, 0.5)")
    for name in ("base_qber_x", "base_qber_z"):
        value = getattr(fid, name)
        if value is not None and not 0.0 <= value < 0.5:
            problems.append(f"fidelity.{name} must lie in [0, 0.5)")

    proto = config.protocol
    if not (isinstance(proto.max_trials, int) and proto.max_trials >= 1):
        problems.append("protocol.max_trials must be an integer >= 1")
    if not proto.sequence_rate_hz > 0:
        problems.append("protocol.sequence_rate_hz must be positive")
    _check_prob(problems, "protocol.duty_cycle", proto.duty_cycle, low_open=True)
    if not proto.error_correction_efficiency >= 1.0:
        problems.append("protocol.error_correction_efficiency must be >= 1")
    _check_prob(problems, "protocol.atom_present_prob", proto.atom_present_prob, low_open=True)

    if not (isinstance(config.rng_seed, int) and 0 <= config.rng_seed < 2**64):
        problems.append("rng_seed must be an unsigned 64-bit integer")

    if problems:
        raise ConfigError(problems)
    return config
