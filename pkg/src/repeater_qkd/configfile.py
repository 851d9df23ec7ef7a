"""Flat ``section.key = value`` configuration files.

One assignment per line, ``#`` starts a comment. Every key must name a field
of a :class:`~repeater_qkd.params.ScenarioConfig` section (or ``rng_seed``);
unknown keys are a hard error. Keys that are absent keep their defaults.
"""
from __future__ import annotations

import dataclasses
import types
import typing
from pathlib import Path

from .params import ScenarioConfig

SECTIONS = ("channel", "memory", "detectors", "bsm", "fidelity", "protocol")


class ConfigFileError(ValueError):
    pass


def _field_types(cls) -> dict[str, object]:
    return typing.get_type_hints(cls)


def _parse_value(raw: str, tp: object, key: str) -> object:
    text = raw.strip()
    optional = False
    if typing.get_origin(tp) in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        optional = len(args) < len(typing.get_args(tp))
        tp = args[0]
    if optional and text.lower() == "none":
        return None
    try:
        if tp is bool:
            lowered = text.lower()
            if lowered not in ("true", "false"):
                raise ValueError(text)
            return lowered == "true"
        if tp is int:
            return int(text, 0)
        if tp is float:
            return float(text)
    except ValueError:
        raise ConfigFileError(f"{key}: cannot parse {text!r} as {getattr(tp, '__name__', tp)}") from None
    raise ConfigFileError(f"{key}: unsupported field type {tp!r}")


def parse_config(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Parse configuration text on top of ``base`` (built-in defaults if omitted)."""
    cfg = base or ScenarioConfig()
    section_values: dict[str, dict[str, object]] = {s: {} for s in SECTIONS}
    top: dict[str, object] = {}
    hints = {s: _field_types(type(getattr(cfg, s))) for s in SECTIONS}
    seen: set[str] = set()

    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigFileError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key in seen:
            raise ConfigFileError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        if key == "rng_seed":
            top[key] = _parse_value(raw, int, key)
            continue
        section, _, name = key.partition(".")
        if section not in hints or name not in hints[section]:
            raise ConfigFileError(f"line {lineno}: unknown key {key!r}")
        section_values[section][name] = _parse_value(raw, hints[section][name], key)

    updates = {s: dataclasses.replace(getattr(cfg, s), **vals) for s, vals in section_values.items() if vals}
    return dataclasses.replace(cfg, **updates, **top)


def load_config(path: str | Path) -> ScenarioConfig:
    return parse_config(Path(path).read_text())


def _format(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_config(cfg: ScenarioConfig) -> str:
    """Render every field; derived quantities are emitted as comments only."""
    lines = ["# repeater node scenario (L in units of L_att; durations carry their unit)"]
    for section in SECTIONS:
        sub = getattr(cfg, section)
        lines.append(f"\n# [{section}]")
        for f in dataclasses.fields(sub):
            lines.append(f"{section}.{f.name} = {_format(getattr(sub, f.name))}")
        if section == "memory":
            lines.append(f"# derived: memory.effective_time_per_attempt_us = {sub.effective_time_per_attempt_us!r}")
        elif section == "fidelity":
            lines.append(f"# derived: fidelity.qber_x = {sub.qber_x!r}")
            lines.append(f"# derived: fidelity.qber_z = {sub.qber_z!r}")
        elif section == "detectors":
            lines.append(f"# derived: detectors.station_dark_prob = {sub.station_dark_prob!r}")
    lines.append(f"\nrng_seed = {cfg.rng_seed}")
    return "\n".join(lines) + "\n"
