"""Command-line entry point: ``repeater-qkd {defaults,sweep,figure3,outlook}``.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 runtime error.
Data go to files under ``--out``; progress and diagnostics go to stderr.
The worker pool size comes from ``REPEATER_QKD_WORKERS`` (default: CPU count).
"""
from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from collections.abc import Sequence
from pathlib import Path

from .analytic import (
    DEFAULT_OUTLOOK_GRID,
    default_outlook_scenarios,
    direct_transmission_rate,
    herald_probability,
    outlook_base,
    outlook_curves,
)
from .configfile import ConfigFileError, emit_config, load_config
from .keyproc import DEFAULT_CUTOFF_GRID_NS
from .params import EXPERIMENT_DISTANCES, ConfigError, ScenarioConfig, validate
from .stats import log_linear_fit, resampled_slope
from .stochastic import default_workers
from .sweep import (
    COLUMNS,
    SweepSpec,
    config_hash,
    run_sweep,
    sweep_rows_as_lists,
    write_metadata,
    write_table,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
FIGURE3_CUTOFFS = (1, 2, 3, 5, 7, 10, 14, 20, 28, 40)


class UsageError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="repeater-qkd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="scenario file (section.key = value lines)")
    common.add_argument("--seed", type=_u64, help="overrides rng_seed from the config")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")

    mc = argparse.ArgumentParser(add_help=False)
    mc.add_argument("--rounds", type=int, default=1_000_000, help="Monte Carlo rounds per grid cell")
    mc.add_argument("--pipeline", choices=("analytic", "montecarlo", "both"), default="both")
    mc.add_argument("--distances", type=_floats, help="comma-separated L/L_att values")
    mc.add_argument("--cutoffs", type=_ints, help="comma-separated trial cutoffs n")

    p = sub.add_parser("defaults", help="print the default scenario file")
    p.add_argument("--config", type=Path, help="echo this scenario instead of the defaults")
    p.add_argument("--out", type=Path, help="write to this file instead of stdout")

    p = sub.add_parser("sweep", parents=[common, mc], help="rate table over (L, n)")
    p.add_argument("--optimize-dt", action="store_true",
                   help="pick the best detection-time cutoff per cell instead of bsm.dt_cutoff_ns")

    sub.add_parser("figure3", parents=[common, mc], help="yield, slope, QBER and key-rate tables")

    p = sub.add_parser("outlook", parents=[common], help="projected key rate for improved parameters")
    p.add_argument("--distances", type=_floats, help="comma-separated L/L_att values")
    p.add_argument("--scenario", action="append", dest="scenarios",
                   help="improvement to include (memory, bsm, fidelity); repeatable, default all")
    p.add_argument("--no-scenarios", action="store_true", help="baseline curves only")
    return parser


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, rng_seed=args.seed)
    return validate(cfg)


def _progress(done: int, total: int) -> None:
    if sys.stderr.isatty():
        print(f"\rcell {done}/{total}", end="\n" if done == total else "", file=sys.stderr, flush=True)
    elif done == total:
        print(f"{total} Monte Carlo cells done", file=sys.stderr)


def _spec(args, cfg: ScenarioConfig, distances, cutoffs, dt_grid) -> SweepSpec:
    return SweepSpec(
        scenario=cfg,
        distances=args.distances or distances,
        cutoffs=args.cutoffs or cutoffs,
        rounds_per_cell=args.rounds,
        pipeline=args.pipeline,
        dt_grid_ns=dt_grid,
    ).check()


def _header(cfg: ScenarioConfig, what: str) -> dict[str, object]:
    return {"table": what, "config_sha256": config_hash(cfg), "seed": cfg.rng_seed}


def cmd_defaults(args) -> int:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    text = emit_config(validate(cfg))
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args, spec: SweepSpec) -> int:
    cfg = spec.scenario
    rows = run_sweep(spec, workers=default_workers(), progress=_progress)
    args.out.mkdir(parents=True, exist_ok=True)
    write_table(args.out / "sweep.csv", COLUMNS, sweep_rows_as_lists(rows), _header(cfg, "sweep"))
    write_metadata(args.out / "sweep.json", cfg, cfg.rng_seed, _spec_meta(spec))
    return EXIT_OK


def _spec_meta(spec: SweepSpec) -> dict[str, object]:
    return {
        "distances": list(spec.distances),
        "cutoffs": list(spec.cutoffs),
        "rounds_per_cell": spec.rounds_per_cell,
        "pipeline": spec.pipeline,
        "dt_grid_ns": None if spec.dt_grid_ns is None else list(spec.dt_grid_ns),
    }


def _slope(points, pipeline: str, seed: int, n: int):
    pts = [p for p in points if p[1] > 0 and math.isfinite(p[1])]
    if len(pts) < 2:
        return None
    if pipeline == "montecarlo":
        return resampled_slope(pts, 1000, rng_seed=seed + n, n_cutoff=n)
    return log_linear_fit(pts, n_cutoff=n)


def cmd_figure3(args, spec: SweepSpec) -> int:
    cfg = spec.scenario
    rows = run_sweep(spec, workers=default_workers(), progress=_progress)
    args.out.mkdir(parents=True, exist_ok=True)
    write_table(args.out / "figure3_cells.csv", COLUMNS, sweep_rows_as_lists(rows), _header(cfg, "figure3 cells"))

    slope_rows = []
    for pipeline in spec.pipelines:
        for n in spec.cutoffs:
            cell = [r for r in rows if r.pipeline == pipeline and r.n_cutoff == n]
            y = _slope([(r.distance_ratio, r.yield_per_channel_use, r.yield_stderr) for r in cell], pipeline,
                       cfg.rng_seed, n)
            k = _slope([(r.distance_ratio, r.secret_key_rate, r.secret_key_rate_stderr) for r in cell], pipeline,
                       cfg.rng_seed, n)
            slope_rows.append([
                pipeline, n,
                y.slope if y else math.nan, y.slope_stderr if y else math.nan,
                k.slope if k else math.nan, k.slope_stderr if k else math.nan,
            ])
    write_table(args.out / "figure3_slopes.csv",
                ("pipeline", "n_cutoff", "yield_slope", "yield_slope_stderr", "rate_slope", "rate_slope_stderr"),
                slope_rows, _header(cfg, "figure3 slopes"))

    dist = sorted(set(spec.distances))
    direct_rows = []
    for x in dist:
        real = direct_transmission_rate(cfg, x)
        ideal = direct_transmission_rate(cfg, x, ideal=True)
        direct_rows.append([x, real.yield_per_channel_use, real.secret_key_rate, ideal.secret_key_rate])
    write_table(args.out / "figure3_direct.csv",
                ("distance_ratio", "click_probability", "secret_key_rate", "secret_key_rate_ideal"),
                direct_rows, _header(cfg, "figure3 direct transmission"))
    write_metadata(args.out / "figure3.json", cfg, cfg.rng_seed, _spec_meta(spec))
    return EXIT_OK


def cmd_outlook(args, cfg: ScenarioConfig) -> int:
    available = {sc.label: sc for sc in default_outlook_scenarios(cfg)}
    if args.no_scenarios:
        chosen = []
    elif args.scenarios:
        unknown = sorted(set(args.scenarios) - set(available))
        if unknown:
            raise UsageError(f"unknown scenario(s) {unknown}; choose from {sorted(available)}")
        chosen = [available[s] for s in dict.fromkeys(args.scenarios)]
    else:
        chosen = list(available.values())
    distances = args.distances or DEFAULT_OUTLOOK_GRID
    if any(d < 0 for d in distances):
        raise UsageError("distances must be >= 0")

    result = outlook_curves(cfg, chosen, distances)
    labels = list(result.curves)
    args.out.mkdir(parents=True, exist_ok=True)
    columns = ["distance_ratio", "mean_trials", "direct"]
    columns += [f"{lab}{suffix}" for lab in labels for suffix in ("", "_n_cutoff")]
    table = []
    for i, x in enumerate(result.distances):
        row: list[object] = [x, result.mean_trials[i], result.direct[i].secret_key_rate]
        for lab in labels:
            pt = result.curves[lab][i]
            row += [pt.secret_key_rate, pt.n_cutoff]
        table.append(row)
    write_table(args.out / "outlook_curves.csv", columns, table, _header(cfg, "outlook curves"))

    cross = []
    root = outlook_base(cfg)
    for lab in labels:
        x = result.crossovers[lab]
        if x is None:
            cross.append([lab, math.nan, math.nan, math.nan])
        else:
            skr = direct_transmission_rate(cfg, x).secret_key_rate
            cross.append([lab, x, skr, 1.0 / herald_probability(root, x)])
    write_table(args.out / "outlook_crossovers.csv",
                ("scenario", "crossover_distance_ratio", "secret_key_rate_at_crossover", "mean_trials_at_crossover"),
                cross, _header(cfg, "outlook crossovers"))
    write_metadata(args.out / "outlook.json", cfg, cfg.rng_seed, {
        "scenarios": {sc.label: dict(sc.overrides) for sc in chosen},
        "distances": [float(d) for d in distances],
        "crossovers": {k: v for k, v in result.crossovers.items()},
    })
    for lab in labels:
        x = result.crossovers[lab]
        msg = "no crossover within plotted range" if x is None else f"crossover at L/L_att = {x:.3f}"
        print(f"{lab}: {msg}", file=sys.stderr)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "defaults":
            return cmd_defaults(args)
        cfg = _load(args)
        if args.command == "sweep":
            spec = _spec(args, cfg, EXPERIMENT_DISTANCES, (1, 5, 40),
                         DEFAULT_CUTOFF_GRID_NS if args.optimize_dt else None)
        elif args.command == "figure3":
            spec = _spec(args, cfg, EXPERIMENT_DISTANCES, FIGURE3_CUTOFFS, DEFAULT_CUTOFF_GRID_NS)
    except (ConfigError, ConfigFileError, UsageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "sweep":
            return cmd_sweep(args, spec)
        if args.command == "figure3":
            return cmd_figure3(args, spec)
        return cmd_outlook(args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure past validation is a runtime error
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
