import json
import subprocess
import sys

import numpy as np
import pytest

from fluxqudit import CrossingChain
from fluxqudit import io
from fluxqudit.cli import RunConfig, compare_reports, main, run
from fluxqudit.density import Trajectory
from fluxqudit.errors import ValidationError
from fluxqudit.lzsm import rate_equation_evolve

REFERENCE_DELTAS = [3e-8, 7e-5, 4e-4, 1e-3, 2e-3, 3e-3]


def test_dotted_and_sectioned_keys_agree():
    a = io.parse_config_text("stage = spectrum\ncircuit.beta_L = 1.3\ngrid.n_points = 512\n")
    b = io.parse_config_text("stage = spectrum\n[circuit]\nbeta_L = 1.3\n[grid]\nn_points = 512  # comment\n")
    assert a == b == {"stage": "spectrum", "circuit.beta_l": "1.3", "grid.n_points": "512"}


def test_config_error_names_key(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("circuit.u0_K = lots\n")
    with pytest.raises(io.ConfigError) as exc:
        RunConfig.from_values(io.read_config(path), path, stage="spectrum")
    assert exc.value.key == "circuit.u0_k"
    assert str(path) in str(exc.value)


def test_physical_circuit_keys():
    cfg = RunConfig.from_values(
        {"circuit.l_h": "2.4e-10", "circuit.c_f": "1e-13", "circuit.ic_a": "1.75e-6"}, stage="spectrum"
    )
    assert cfg.params.U0 * cfg.params.beta_L == pytest.approx(41.7, rel=0.01)


def test_csv_round_trip_is_exact(tmp_path, rng):
    values = rng.normal(size=(5, 3)) * 10.0 ** rng.integers(-12, 3, size=(5, 3))
    path = io.write_csv(tmp_path / "t.csv", ["a", "b", "c"], values.tolist())
    header, rows = io.read_csv(path)
    assert header == ["a", "b", "c"]
    assert np.array_equal(np.array(rows), values)


def test_density_dump_round_trip(tmp_path, rng):
    mats = [rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)) for _ in range(4)]
    path = io.write_density_dump(tmp_path / "r.bin", [0.1, 0.2, 0.3, 0.4], mats)
    assert path.stat().st_size == 4 * (16 + 16 * 9)
    stamps, back = io.read_density_dump(path)
    assert np.array_equal(stamps, [0.1, 0.2, 0.3, 0.4])
    assert all(np.array_equal(a, b) for a, b in zip(mats, back))


def test_spectrum_stage_outputs(tmp_path, capsys):
    out = tmp_path / "spec"
    assert main(["--stage", "spectrum", "--out", str(out)]) == 0
    header, rows = io.read_csv(out / "spectrum.csv")
    assert header[:3] == ["level", "energy_K", "localization"]
    assert len(rows) == 9
    assert [r[2] for r in rows][6:8] == ["Left", "Right"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["stage"] == "spectrum"
    assert set(manifest["files"]) == {"spectrum.csv"}
    assert manifest["tolerances"]["trace"] == 1e-8


def test_runs_are_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["--stage", "spectrum", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "spectrum.csv").read_bytes() == (tmp_path / "b" / "spectrum.csv").read_bytes()


def test_sweep_output_independent_of_workers(tmp_path):
    cfg = tmp_path / "sweep.cfg"
    cfg.write_text("stage = sweep-flux\n[sweep]\nstart = 0.492\nstop = 0.508\nn_steps = 5\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path / "one"), "--workers", "1"]) == 0
    assert main(["--config", str(cfg), "--out", str(tmp_path / "two"), "--workers", "2"]) == 0
    assert (tmp_path / "one" / "sweep_flux.csv").read_bytes() == (tmp_path / "two" / "sweep_flux.csv").read_bytes()


def test_empty_range_writes_nothing(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("stage = sweep-flux\nsweep.start = 0.5\nsweep.stop = 0.5\n")
    out = tmp_path / "never"
    assert main(["--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()
    assert "empty" in capsys.readouterr().err


def test_unknown_stage_is_validation_error(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("stage = plot\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path / "x")]) == 2


def test_numeric_failure_exit_code(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("stage = crossings\ncrossings.start = 0.5001\ncrossings.stop = 0.4999\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path / "x")]) == 3
    assert not (tmp_path / "x").exists()


def test_check_mode_writes_nothing(tmp_path, capsys):
    assert main(["--check", "--out", str(tmp_path / "chk")]) == 0
    assert not (tmp_path / "chk").exists()
    assert "capture_invariants: ok" in capsys.readouterr().out


def test_design_speed_stage(tmp_path):
    assert main(["--stage", "design-speed", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "design.json").read_text())
    assert 0.15 <= doc["dphi_dt_phi0_per_us"] <= 0.3
    assert doc["ramp_duration_us"] == pytest.approx(0.1, rel=0.3)


def test_aim_stage_with_tabulated_gaps(tmp_path):
    cfg = tmp_path / "aim.cfg"
    cfg.write_text("stage = aim\naim.deltas_K = " + ", ".join(map(str, REFERENCE_DELTAS)) + "\naim.gamma_per_ns = 0\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path / "aim")]) == 0
    _, rows = io.read_csv(tmp_path / "aim" / "aim.csv")
    aim = np.array([r[1] for r in rows])
    assert aim.sum() == pytest.approx(1.0)
    assert aim[-1] > 0.99


def test_module_entry_point(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "fluxqudit", "--stage", "design-speed", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0
    assert (tmp_path / "design.json").exists()


def _toy(stamps, occ):
    return Trajectory(np.asarray(stamps, float), np.asarray(occ, float), stamp_name="x_e")


def test_compare_identical_is_zero():
    t = _toy([0.5, 0.499, 0.498], [[1, 0], [0.5, 0.5], [0, 1]])
    rep = compare_reports(t, t)
    assert rep["max_deviation"] == 0.0 and rep["max_final_deviation"] == 0.0
    assert not rep["flagged"]


def test_compare_disjoint_ranges():
    with pytest.raises(ValidationError):
        compare_reports(_toy([0.5, 0.49], [[1, 0], [0, 1]]), _toy([0.48, 0.47], [[1, 0], [0, 1]]))


def test_compare_flags_wrong_relaxation(reset_run, path_crossings):
    good = CrossingChain.from_crossings(path_crossings, 0.454, 22.7, 0.5001, 0.4913)
    wrong = CrossingChain.from_crossings(path_crossings, 0.454, 5.0, 0.5001, 0.4913)
    assert not compare_reports(reset_run, rate_equation_evolve(good).trajectory)["flagged"]
    assert compare_reports(reset_run, rate_equation_evolve(wrong).trajectory)["flagged"]


def test_compare_with_tabulated_gap_chain(reset_run, path_crossings):
    chain = CrossingChain.from_crossings(path_crossings, 0.454, 22.7, 0.5001, 0.4913, deltas=REFERENCE_DELTAS)
    rep = compare_reports(reset_run, rate_equation_evolve(chain).trajectory)
    assert rep["max_final_deviation"] <= 0.05
