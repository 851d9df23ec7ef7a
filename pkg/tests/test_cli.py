import csv
import json
import subprocess
import sys
import time

import pytest

from repeater_qkd.cli import main
from repeater_qkd.configfile import parse_config
from repeater_qkd.params import ScenarioConfig


def read_table(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def test_defaults_round_trip(capsys):
    assert main(["defaults"]) == 0
    text = capsys.readouterr().out
    assert "memory.dephasing_time_ms = 20.0" in text
    assert "detectors.dark_count_prob_per_gate = 1e-05" in text
    assert parse_config(text) == ScenarioConfig()


def test_analytic_sweep_is_fast(tmp_path):
    t0 = time.perf_counter()
    assert main(["sweep", "--pipeline", "analytic", "--out", str(tmp_path)]) == 0
    assert time.perf_counter() - t0 < 1.0
    rows = read_table(tmp_path / "sweep.csv")
    assert len(rows) == 9
    assert [(r["distance_ratio"], r["n_cutoff"]) for r in rows][:3] == [("0.0", "1"), ("0.0", "5"), ("0.0", "40")]
    header = (tmp_path / "sweep.csv").read_text().splitlines()[:3]
    assert header[1].startswith("# config_sha256: ") and header[2] == "# seed: 20211"
    meta = json.loads((tmp_path / "sweep.json").read_text())
    assert meta["seed"] == 20211 and meta["config"]["memory"]["dephasing_time_ms"] == 20.0
    assert "numpy" in meta["versions"]


def test_both_pipelines_give_paired_rows(tmp_path):
    assert main(["sweep", "--rounds", "20000", "--cutoffs", "40", "--out", str(tmp_path)]) == 0
    rows = read_table(tmp_path / "sweep.csv")
    assert [r["pipeline"] for r in rows] == ["analytic", "montecarlo"] * 3
    mc = [r for r in rows if r["pipeline"] == "montecarlo"]
    assert float(mc[0]["equivalent_distance"]) == 0.0
    assert float(mc[2]["equivalent_distance"]) == pytest.approx(1.8, abs=0.2)


def test_rerun_is_byte_identical_across_worker_counts(tmp_path, monkeypatch):
    args = ["sweep", "--rounds", "30000", "--seed", "7", "--cutoffs", "1,40", "--optimize-dt"]
    monkeypatch.setenv("REPEATER_QKD_WORKERS", "1")
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("REPEATER_QKD_WORKERS", "2")
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("sweep.csv", "sweep.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("memory.nonsense = 3\n")
    assert main(["sweep", "--config", str(bad), "--out", str(tmp_path)]) == 2
    invalid = tmp_path / "invalid.cfg"
    invalid.write_text("bsm.efficiency = 0.7\n")
    assert main(["sweep", "--config", str(invalid), "--out", str(tmp_path)]) == 2
    assert "linear-optics" in capsys.readouterr().err
    assert main(["sweep", "--rounds", "10", "--out", str(tmp_path)]) == 2
    assert main(["sweep", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["outlook", "--scenario", "warp", "--out", str(tmp_path)]) == 2


def test_unwritable_output_exits_3(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["sweep", "--pipeline", "analytic", "--out", str(blocker)]) == 3
    assert "runtime error" in capsys.readouterr().err


def test_figure3_outputs(tmp_path):
    assert main(["figure3", "--rounds", "20000", "--cutoffs", "1,40", "--out", str(tmp_path)]) == 0
    for name in ("figure3_cells.csv", "figure3_slopes.csv", "figure3_direct.csv", "figure3.json"):
        assert (tmp_path / name).exists()
    slopes = {(r["pipeline"], r["n_cutoff"]): r for r in read_table(tmp_path / "figure3_slopes.csv")}
    assert float(slopes[("analytic", "1")]["yield_slope"]) == pytest.approx(-1.0, abs=0.05)
    assert float(slopes[("analytic", "40")]["yield_slope"]) == pytest.approx(-0.5, abs=0.05)


def test_figure3_zero_noise_has_zero_qber(tmp_path):
    cfg = tmp_path / "clean.cfg"
    cfg.write_text(
        "fidelity.zero_distance_fidelity = 1.0\n"
        "detectors.dark_count_prob_per_gate = 0.0\n"
        "memory.dephasing_time_ms = inf\n"
        "bsm.indistinguishability_decay_time_ns = inf\n"
    )
    assert main(["figure3", "--config", str(cfg), "--rounds", "20000", "--cutoffs", "5",
                 "--out", str(tmp_path)]) == 0
    for row in read_table(tmp_path / "figure3_cells.csv"):
        assert float(row["qber_x"]) == 0.0 and float(row["qber_z"]) == 0.0


def test_outlook_baseline_only(tmp_path):
    assert main(["outlook", "--no-scenarios", "--distances", "0,3,6", "--out", str(tmp_path)]) == 0
    crossings = read_table(tmp_path / "outlook_crossovers.csv")
    assert [r["scenario"] for r in crossings] == ["current"]
    curves = read_table(tmp_path / "outlook_curves.csv")
    assert list(curves[0]) == ["distance_ratio", "mean_trials", "direct", "current", "current_n_cutoff"]


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "repeater_qkd", "defaults"], capture_output=True, text=True,
                         check=True)
    assert "protocol.max_trials = 40" in out.stdout
