import json
import subprocess
import sys

import numpy as np
import pytest

from poroscale import cli
from poroscale.config import parse_config, parse_config_text
from poroscale.errors import ConfigError
from poroscale.fileio import read_levelset, read_vtk_point_scalars, sha256_file
from poroscale.verify import Check, CriterionResult

SMALL = """
[geometry]
radius = 0.3
n = 32

[evolution]
method = analytic
r_end = 0.12

[tables]
samples = 6
with_k = true
delta = 0.02
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def run_cli(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def table_file(tmp_path_factory):
    root = tmp_path_factory.mktemp("table")
    cfg = write(root, "table.ini", SMALL)
    assert cli.main(["table", "--config", str(cfg), "--out", str(root / "out")]) == 0
    return root / "out" / "table.csv"


def scenario(table_file, macro, darcy="", output="formats = csv,vtk,json"):
    return (SMALL + f"file = {table_file}\n\n[macro]\n{macro}\n\n[darcy]\n{darcy}\n\n[output]\n{output}\n")


# --- configuration parsing ---

def test_minimal_file_fills_documented_defaults():
    cfg = parse_config_text("[macro]\nmode = partial_diffusive\n")
    assert cfg.geometry.radius == 0.3 and cfg.geometry.n == 128
    assert cfg.evolution.r_end == 0.15
    assert cfg.tables.samples == 7 and cfg.tables.delta == 0.05
    assert cfg.macro.nx == 16 and cfg.macro.dt == 0.01
    assert cfg.formats() == {"csv", "vtk", "json"}


def test_default_configuration_is_valid():
    parse_config_text("")


def test_unknown_key_reports_line_number():
    with pytest.raises(ConfigError) as info:
        parse_config_text("[macro]\nnx = 8\n\nbogus = 3\n")
    assert "bogus (line 4)" in str(info.value)


def test_bad_value_reports_line_number():
    with pytest.raises(ConfigError) as info:
        parse_config_text("[geometry]\nradius = 0.3\nn = lots\n")
    assert "[geometry] n (line 3)" in str(info.value)


def test_duplicate_key_and_unknown_section_are_rejected():
    with pytest.raises(ConfigError) as info:
        parse_config_text("[macro]\nnx = 1\nnx = 2\n")
    assert "line 3" in str(info.value)
    with pytest.raises(ConfigError):
        parse_config_text("[solver]\ntol = 1\n")


def test_full_coupling_with_advection_is_refused():
    with pytest.raises(ConfigError) as info:
        parse_config_text("[macro]\nmode = full_advective\n")
    assert "full coupling with advective transport" in str(info.value)


def test_incompatible_boundary_concentration_is_refused():
    with pytest.raises(ConfigError) as info:
        parse_config_text("[macro]\nc0 = 1\nc_left = 0\n")
    assert "c_left" in str(info.value) and "c0=1" in str(info.value)


def test_order_parameter_beyond_path_is_refused():
    with pytest.raises(ConfigError) as info:
        parse_config_text("[macro]\ns0 = 0.1\ns_rate = 1.0\nt_end = 0.2\n")
    assert "outside the tabulated range" in str(info.value)


def test_circle_outside_porosity_band_is_refused():
    with pytest.raises(ConfigError) as info:
        parse_config_text("[evolution]\nr_end = 0.1\n")
    assert "r_end" in str(info.value)


def test_all_problems_are_reported_together():
    with pytest.raises(ConfigError) as info:
        parse_config_text("[macro]\ndt = -1\nnx = 0\n[output]\nevery = 0\n")
    assert len(info.value.problems) >= 3


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "absent.ini")


# --- commands ---

def test_cell_command_summarises_circle(tmp_path, capsys):
    cfg = write(tmp_path, "cell.ini", SMALL.replace("n = 32", "n = 64"))
    code, out, _ = run_cli(["cell", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 0
    summary = json.loads((tmp_path / "o" / "cell_summary.json").read_text())
    assert summary["phi"] == pytest.approx(0.7173, abs=5e-3)
    assert summary["sigma"] == pytest.approx(1.885, rel=1e-2)
    assert summary["D_anisotropy"] <= 1e-3 and summary["D_offdiagonal"] <= 1e-3
    assert "phi = 0.71" in out
    phi = read_levelset(tmp_path / "o" / "levelset.txt")
    assert phi.n == 64


def test_table_command_writes_tables(table_file):
    root = table_file.parent
    lines = table_file.read_text().splitlines()
    assert lines[0].split(",")[:3] == ["s", "phi", "sigma"]
    assert len(lines) == 7
    assert (root / "phi_table.csv").exists()
    assert (root / "table_smoothness.csv").exists()


def test_transport_zero_length_emits_initial_state(tmp_path, capsys, table_file):
    cfg = write(tmp_path, "t0.ini", scenario(table_file, "t_end = 0\nnx = 8\nny = 8"))
    code, _, _ = run_cli(["transport", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 0
    assert sorted(p.name for p in (tmp_path / "o" / "transport").iterdir()) == ["state_00000.vtk"]
    rows = (tmp_path / "o" / "diagnostics.csv").read_text().splitlines()
    assert len(rows) == 2
    fields = read_vtk_point_scalars(tmp_path / "o" / "transport" / "state_00000.vtk")
    np.testing.assert_allclose(fields["concentration"], 1.0)


def test_repeated_runs_give_identical_csv(tmp_path, capsys, table_file):
    text = scenario(table_file, "t_end = 0.05\nnx = 8\nny = 8\ns_grad_x = 0.02\nc_left = 1.0")
    cfg = write(tmp_path, "p.ini", text)
    for d in ("a", "b"):
        assert run_cli(["transport", "--config", cfg, "--out", tmp_path / d], capsys)[0] == 0
    for name in ("diagnostics.csv", "transport_summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_darcy_command_runs_slices_and_is_deterministic(tmp_path, capsys, table_file):
    darcy = "left = dirichlet:1.0\nright = dirichlet:0.0\nslices = 4"
    cfg = write(tmp_path, "d.ini", scenario(table_file, "nx = 8\nny = 8\nt_end = 0.4\ns_rate = 0.1", darcy))
    for d in ("a", "b"):
        code, out, _ = run_cli(["darcy", "--config", cfg, "--out", tmp_path / d, "--threads", 2], capsys)
        assert code == 0 and "5 Darcy slices" in out
    for name in ("darcy_slices.csv", "continuity.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a" / "darcy_summary.json").read_text())
    assert summary["max_mass_balance"] <= 1e-9


def test_manifest_lists_hashes_of_outputs(tmp_path, capsys, table_file):
    cfg = write(tmp_path, "m.ini", scenario(table_file, "t_end = 0.02\nnx = 6\nny = 6"))
    assert run_cli(["transport", "--config", cfg, "--out", tmp_path / "o"], capsys)[0] == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["command"] == "transport"
    assert manifest["artifacts"]
    for entry in manifest["artifacts"]:
        assert sha256_file(tmp_path / "o" / entry["path"]) == entry["sha256"]


def test_output_directory_from_environment(tmp_path, capsys, table_file, monkeypatch):
    cfg = write(tmp_path, "e.ini", scenario(table_file, "t_end = 0\nnx = 4\nny = 4", output="formats = csv"))
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env_out"))
    assert run_cli(["transport", "--config", cfg], capsys)[0] == 0
    assert (tmp_path / "env_out" / "diagnostics.csv").exists()
    assert not (tmp_path / "env_out" / "transport").exists()


# --- exit codes ---

def assert_single_line(err, prefix):
    lines = err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith(prefix)


def test_config_error_exits_1(tmp_path, capsys):
    cfg = write(tmp_path, "bad.ini", "[macro]\nmode = full_advective\n")
    code, _, err = run_cli(["transport", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 1
    assert_single_line(err, "ConfigError:")


def test_missing_config_exits_1(capsys):
    code, _, err = run_cli(["cell"], capsys)
    assert code == 1
    assert_single_line(err, "ConfigError:")


def test_band_exit_exits_2_and_keeps_outputs(tmp_path, capsys, table_file):
    macro = "mode = full_diffusive\nnx = 8\nny = 8\nc0 = 5.0\nphi0 = 0.75\nt_end = 0.2\ndt = 0.001"
    cfg = write(tmp_path, "band.ini", scenario(table_file, macro))
    code, _, err = run_cli(["transport", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 2
    assert_single_line(err, "BandViolationError:")
    assert "valid up to t=" in err
    summary = json.loads((tmp_path / "o" / "transport_summary.json").read_text())
    assert summary["completed"] is False and 0 < summary["horizon"] < 0.2
    assert (tmp_path / "o" / "manifest.json").exists()


def test_cfl_violation_exits_3(tmp_path, capsys, table_file):
    macro = "mode = partial_advective\nnx = 8\nny = 8\nt_end = 0.5\ndt = 0.5\ns_rate = 0.1"
    darcy = "left = dirichlet:100.0\nright = dirichlet:0.0"
    cfg = write(tmp_path, "cfl.ini", scenario(table_file, macro, darcy))
    code, _, err = run_cli(["transport", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 3
    assert_single_line(err, "StabilityError:")


def test_sweep_beyond_horizon_exits_4(tmp_path, capsys):
    text = "[geometry]\nn = 32\n[evolution]\nmethod = levelset\nv_n = 1\ndt = 0.05\nsteps = 6\n" \
           "[tables]\nsamples = 4\nwith_k = false\n"
    cfg = write(tmp_path, "h.ini", text)
    code, _, err = run_cli(["table", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 4
    assert_single_line(err, "ValidityHorizonError:")


def test_failed_verification_exits_5(tmp_path, capsys, monkeypatch):
    failing = CriterionResult(1, "stub", [Check("forced", 1.0, "<= 0", False)])
    monkeypatch.setattr(cli, "run_criteria", lambda seed=0: [failing])
    code, out, _ = run_cli(["verify", "--out", tmp_path / "o"], capsys)
    assert code == cli.VERIFY_FAILED == 5
    assert "[FAIL] criterion 1: stub" in out
    assert "0/1 criteria passed" in (tmp_path / "o" / "verify_report.txt").read_text()


def test_console_script_reports_usage_errors():
    proc = subprocess.run([sys.executable, "-m", "poroscale.cli", "nonsense"], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "invalid choice" in proc.stderr
