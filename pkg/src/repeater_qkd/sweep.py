"""Grid sweeps over (distance, cutoff) for the analytic and Monte Carlo pipelines."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import platform
import sys
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analytic import herald_probability, secret_key_rate_analytic
from .configfile import emit_config
from .keyproc import equivalent_distance, estimate_cell, optimize_cutoff
from .params import EXPERIMENT_DISTANCES, ScenarioConfig, validate
from .stochastic import run_campaign

__all__ = [
    "COLUMNS",
    "PIPELINES",
    "SweepRow",
    "SweepSpec",
    "cell_seed",
    "config_hash",
    "run_sweep",
    "sweep_rows_as_lists",
    "write_metadata",
    "write_table",
]

PIPELINES = ("analytic", "montecarlo")
MIN_MC_ROUNDS = 1000


@dataclass(frozen=True)
class SweepSpec:
    scenario: ScenarioConfig = dataclasses.field(default_factory=ScenarioConfig)
    distances: tuple[float, ...] = EXPERIMENT_DISTANCES
    cutoffs: tuple[int, ...] = (1, 5, 40)
    rounds_per_cell: int = 1_000_000
    pipeline: str = "both"
    # None keeps the configured bsm.dt_cutoff_ns; a grid picks the best cutoff per cell
    dt_grid_ns: tuple[float, ...] | None = None

    @property
    def pipelines(self) -> tuple[str, ...]:
        return PIPELINES if self.pipeline == "both" else (self.pipeline,)

    def check(self) -> SweepSpec:
        validate(self.scenario)
        if not self.distances or not self.cutoffs:
            raise ValueError("distance and cutoff grids must be nonempty")
        if any(d < 0 for d in self.distances):
            raise ValueError("distances must be >= 0")
        if any(int(n) != n or n < 1 for n in self.cutoffs):
            raise ValueError("cutoffs must be integers >= 1")
        if self.pipeline not in (*PIPELINES, "both"):
            raise ValueError(f"unknown pipeline {self.pipeline!r}")
        if "montecarlo" in self.pipelines and self.rounds_per_cell < MIN_MC_ROUNDS:
            raise ValueError(f"montecarlo needs at least {MIN_MC_ROUNDS} rounds per cell")
        if self.dt_grid_ns is not None and not self.dt_grid_ns:
            raise ValueError("dt grid must be nonempty")
        return self


@dataclass(frozen=True)
class SweepRow:
    pipeline: str
    distance_ratio: float
    n_cutoff: int
    equivalent_distance: float
    mean_trials: float
    yield_per_channel_use: float
    yield_stderr: float
    qber_x: float
    qber_x_stderr: float
    qber_z: float
    qber_z_stderr: float
    bits_x: int
    bits_z: int
    secret_fraction: float
    secret_fraction_stderr: float
    secret_key_rate: float
    secret_key_rate_stderr: float
    bsm_acceptance: float
    dt_cutoff_ns: float
    rounds: int


COLUMNS = tuple(f.name for f in fields(SweepRow))


def config_hash(cfg: ScenarioConfig) -> str:
    return hashlib.sha256(emit_config(cfg).encode()).hexdigest()


def cell_seed(seed: int, i_distance: int, i_cutoff: int) -> int:
    """Independent 64-bit seed per grid cell, derived from the sweep seed."""
    ss = np.random.SeedSequence(seed, spawn_key=(i_distance, i_cutoff))
    return int(ss.generate_state(1, np.uint64)[0])


def _with_dt(cfg: ScenarioConfig, dt: float) -> ScenarioConfig:
    return dataclasses.replace(cfg, bsm=dataclasses.replace(cfg.bsm, dt_cutoff_ns=float(dt)))


def _analytic_row(cfg: ScenarioConfig, distance: float, dt_grid) -> SweepRow:
    candidates = [cfg] if dt_grid is None else [_with_dt(cfg, dt) for dt in sorted(dt_grid)]
    best = None
    for c in candidates:
        point = secret_key_rate_analytic(c, distance)
        if best is None or point.secret_key_rate > best[1].secret_key_rate:
            best = (c, point)
    c, p = best
    return SweepRow(
        pipeline="analytic", distance_ratio=distance, n_cutoff=cfg.protocol.max_trials,
        equivalent_distance=math.nan, mean_trials=1.0 / herald_probability(cfg, distance),
        yield_per_channel_use=p.yield_per_channel_use, yield_stderr=0.0,
        qber_x=p.qber_x, qber_x_stderr=0.0, qber_z=p.qber_z, qber_z_stderr=0.0,
        bits_x=0, bits_z=0,
        secret_fraction=p.secret_fraction, secret_fraction_stderr=0.0,
        secret_key_rate=p.secret_key_rate, secret_key_rate_stderr=0.0,
        bsm_acceptance=p.bsm_acceptance_fraction, dt_cutoff_ns=c.bsm.dt_cutoff_ns, rounds=0,
    )


def _mc_row(args) -> SweepRow:
    cfg, distance, rounds, seed, dt_grid = args
    log = run_campaign(cfg, distance, rounds, rng_seed=seed).records
    f = cfg.protocol.error_correction_efficiency
    # the cap filter only matters when atoms can be lost
    filt = cfg.protocol.atom_present_prob < 1.0
    if dt_grid is None:
        est = estimate_cell(log, cfg.bsm.dt_cutoff_ns, distance, f, filt)
    else:
        _, est = optimize_cutoff(log, dt_grid, distance, f, filt)
    return SweepRow(
        pipeline="montecarlo", distance_ratio=distance, n_cutoff=cfg.protocol.max_trials,
        equivalent_distance=math.nan, mean_trials=est.mean_trials,
        yield_per_channel_use=est.yield_per_channel_use, yield_stderr=est.yield_stderr,
        qber_x=est.qber_x.qber, qber_x_stderr=est.qber_x.qber_stderr,
        qber_z=est.qber_z.qber, qber_z_stderr=est.qber_z.qber_stderr,
        bits_x=est.qber_x.bits_total, bits_z=est.qber_z.bits_total,
        secret_fraction=est.secret_fraction, secret_fraction_stderr=est.secret_fraction_stderr,
        secret_key_rate=est.secret_key_rate, secret_key_rate_stderr=est.secret_key_rate_stderr,
        bsm_acceptance=est.bsm_acceptance_fraction, dt_cutoff_ns=est.dt_cutoff_ns, rounds=est.samples,
    )


def _calibrate(rows: list[SweepRow], configured_offset: float) -> list[SweepRow]:
    """Fill in equivalent distance, zeroing the smallest distance per (pipeline, n)."""
    out = []
    groups: dict[tuple[str, int], float] = {}
    for r in sorted(rows, key=lambda r: r.distance_ratio):
        key = (r.pipeline, r.n_cutoff)
        if key not in groups:
            groups[key] = configured_offset or 2.0 * math.log(r.mean_trials)
    for r in rows:
        offset = groups[(r.pipeline, r.n_cutoff)]
        eq = equivalent_distance(r.mean_trials, offset) if math.isfinite(r.mean_trials) else math.nan
        out.append(dataclasses.replace(r, equivalent_distance=eq))
    return out


def run_sweep(spec: SweepSpec, seed: int | None = None, workers: int = 1, progress=None) -> list[SweepRow]:
    """All rows of the sweep, ordered by (distance, cutoff, pipeline).

    Monte Carlo cells get seeds from :func:`cell_seed`, so the output does not
    depend on ``workers`` or on completion order.
    """
    spec.check()
    base = spec.scenario
    seed = base.rng_seed if seed is None else int(seed)
    rows: list[SweepRow] = []
    jobs = []
    for i, distance in enumerate(spec.distances):
        for j, n in enumerate(spec.cutoffs):
            cfg = base.with_cutoff(int(n))
            if "analytic" in spec.pipelines:
                rows.append(_analytic_row(cfg, float(distance), spec.dt_grid_ns))
            if "montecarlo" in spec.pipelines:
                jobs.append((cfg, float(distance), spec.rounds_per_cell, cell_seed(seed, i, j), spec.dt_grid_ns))

    if jobs:
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for k, row in enumerate(pool.map(_mc_row, jobs), 1):
                    rows.append(row)
                    if progress:
                        progress(k, len(jobs))
        else:
            for k, job in enumerate(jobs, 1):
                rows.append(_mc_row(job))
                if progress:
                    progress(k, len(jobs))

    rows = _calibrate(rows, base.channel.equivalent_distance_offset)
    order = {p: k for k, p in enumerate(PIPELINES)}
    rows.sort(key=lambda r: (r.distance_ratio, r.n_cutoff, order[r.pipeline]))
    return rows


def _fmt(value: object) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_table(path: Path, columns: Sequence[str], rows: Sequence[Sequence[object]], header: dict[str, object]) -> None:
    """Comma-separated table preceded by ``# key: value`` header lines."""
    lines = [f"# {k}: {v}" for k, v in header.items()]
    lines.append(",".join(columns))
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def sweep_rows_as_lists(rows: Sequence[SweepRow]) -> list[list[object]]:
    return [[getattr(r, c) for c in COLUMNS] for r in rows]


def write_metadata(path: Path, cfg: ScenarioConfig, seed: int, extra: dict[str, object] | None = None) -> None:
    """JSON sidecar with config echo, seed and library versions; no timestamps."""
    meta = {
        "package_version": __version__,
        "config_sha256": config_hash(cfg),
        "seed": seed,
        "config": dataclasses.asdict(cfg),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "platform": sys.platform,
    }
    if extra:
        meta.update(extra)
    Path(path).write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _jsonable(obj: object) -> object:
    # non-finite floats become strings so the sidecar stays strict JSON
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer, np.floating)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj
