import json
from pathlib import Path

import numpy as np
import pytest

from ciphase.cli import main
from ciphase.config import ConfigError, RunConfig, default_config_text, parse_config
from ciphase.runner import diagnose_precision, recompute_phases, run


TINY_CONFIG = """
[model]
gauge = correlated-minus
init_kind = correlated

[grid]
n = 128
length = 20.0

[propagation]
dt = 0.4
t_final_fs = 1.2

[paths]
radii = 2.0, 2.5
path_points = 192
sampling = bilinear
emf_radius = 1.0
emf_path_points = 192

[fields]
epsilon_th = 1e-12

[output]
phase_every_steps = 25
emf_every_steps = 25
observables_every_steps = 25
snapshot_every_steps = 50
fd_steps = 2
"""


def test_default_config_texts_parse():
    for preset in ("desk", "paper"):
        cfg = parse_config(default_config_text(preset))
        assert cfg.model.kappa_x == 0.1
        assert cfg.radii == (2.0, 2.5, 3.0)
    assert parse_config(default_config_text("desk")).n == 256
    assert parse_config(default_config_text("paper")).n == 1024


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("[grid]\nn = 64\nbogus = 1\n")
    with pytest.raises(ConfigError, match="unknown config section"):
        parse_config("[nope]\nx = 1\n")


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        parse_config("[propagation]\ndt = -0.1\n")
    with pytest.raises(ConfigError):
        parse_config("[model]\ngauge = sideways\n")
    with pytest.raises(ConfigError):
        parse_config("[output]\nfd_steps = 40\nemf_every_steps = 10\n")
    with pytest.raises(ConfigError):
        parse_config("[output]\nsnapshot_every_steps = 70\nemf_every_steps = 20\n")


def test_config_hash_is_stable():
    a = parse_config(TINY_CONFIG)
    b = parse_config(TINY_CONFIG + "\n# trailing comment\n")
    assert a.sha256() == b.sha256()
    c = parse_config(TINY_CONFIG.replace("dt = 0.4", "dt = 0.2"))
    assert a.sha256() != c.sha256()


def test_n_steps_rounding():
    cfg = parse_config(TINY_CONFIG)
    assert cfg.n_steps == round(1.5 / 0.02418884 / 0.5)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("run")
    config = parse_config(TINY_CONFIG)
    run(config, outdir)
    return outdir, config


def test_run_produces_expected_files(tiny_run):
    outdir, config = tiny_run
    for name in ("phases.csv", "emf.csv", "observables.csv", "manifest.json", "config.echo.ini"):
        assert (outdir / name).exists()
    manifest = json.loads((outdir / "manifest.json").read_text())
    assert manifest["status"] == "complete"
    assert manifest["config_sha256"] == config.sha256()
    snaps = sorted((outdir / "snapshots").glob("snap_*.bin"))
    assert len(snaps) >= 2  # at least t=0 and final


def test_run_csv_headers_carry_units(tiny_run):
    outdir, _ = tiny_run
    assert (outdir / "phases.csv").read_text().splitlines()[0] == (
        "time_au,time_fs,path_id,R,gamma_over_pi_sformula,gamma_over_pi_momentum,coverage"
    )
    assert (outdir / "observables.csv").read_text().splitlines()[0].startswith("time_au,time_fs,norm,energy_au")


def test_run_is_deterministic(tmp_path):
    config = parse_config(TINY_CONFIG)
    a = tmp_path / "a"
    b = tmp_path / "b"
    run(config, a)
    run(config, b)
    for name in ("phases.csv", "emf.csv", "observables.csv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_resume_reproduces_uninterrupted_run(tmp_path):
    config = parse_config(TINY_CONFIG)
    full = tmp_path / "full"
    run(config, full)

    resumed = tmp_path / "resumed"
    run(config, resumed)
    # Rewind the manifest to an intermediate checkpoint and resume.
    manifest = json.loads((resumed / "manifest.json").read_text())
    steps = sorted(
        int(p.stem.split("_")[1]) for p in (resumed / "snapshots").glob("snap_*.bin")
    )
    mid = steps[1]
    manifest["checkpoint_step"] = mid
    manifest["status"] = "running"
    (resumed / "manifest.json").write_text(json.dumps(manifest))
    run(config, resumed, resume=True)
    for name in ("phases.csv", "emf.csv", "observables.csv"):
        assert (full / name).read_bytes() == (resumed / name).read_bytes()


def test_resume_rejects_config_mismatch(tmp_path):
    config = parse_config(TINY_CONFIG)
    outdir = tmp_path / "run"
    run(config, outdir)
    other = parse_config(TINY_CONFIG.replace("dt = 0.4", "dt = 0.2"))
    with pytest.raises(ConfigError, match="resume"):
        run(other, outdir, resume=True)


def test_recompute_phases_from_snapshots(tiny_run):
    outdir, _ = tiny_run
    out = recompute_phases(outdir)
    lines = Path(out).read_text().splitlines()
    assert lines[0].startswith("time_au,")
    assert len(lines) > 2


def test_diagnose_precision_writes_scatter(tmp_path):
    config = parse_config(TINY_CONFIG)
    out = diagnose_precision(config, tmp_path / "roundtrip.csv")
    lines = Path(out).read_text().splitlines()
    assert lines[0].startswith("# epsilon_th")
    assert lines[2] == "density,squared_error"
    assert len(lines) > 100


def test_cli_write_config(capsys):
    assert main(["write-config", "--preset", "desk"]) == 0
    out = capsys.readouterr().out
    assert "[model]" in out and "epsilon_th" in out


def test_cli_run_plot_phase_roundtrip(tmp_path, capsys):
    cfg_path = tmp_path / "tiny.ini"
    cfg_path.write_text(TINY_CONFIG)
    rundir = tmp_path / "out"
    assert main(["run", str(cfg_path), "--out", str(rundir)]) == 0
    assert main(["plot", str(rundir)]) == 0
    out = capsys.readouterr().out
    assert "phase_vs_time.svg" in out
    assert (rundir / "plots" / "phase_vs_time.svg").exists()
    assert main(["phase", str(rundir), "--radii", "2.0"]) == 0


def test_cli_exit_codes(tmp_path, capsys):
    bad_cfg = tmp_path / "bad.ini"
    bad_cfg.write_text("[grid]\nn = -3\n")
    assert main(["run", str(bad_cfg), "--out", str(tmp_path / "x")]) == 2
    assert main(["run", str(tmp_path / "missing.ini"), "--out", str(tmp_path / "y")]) == 2
    assert main(["plot", str(tmp_path / "not_a_run")]) == 2


def test_cli_diagnose(tmp_path, capsys):
    cfg_path = tmp_path / "tiny.ini"
    cfg_path.write_text(TINY_CONFIG)
    out_csv = tmp_path / "rt.csv"
    assert main(["diagnose-precision", str(cfg_path), "--out", str(out_csv)]) == 0
    assert out_csv.exists()


def test_plot_empty_dir_fails(tmp_path):
    from ciphase.plotting import plot_run

    with pytest.raises(ConfigError):
        plot_run(tmp_path)


def test_box_leak_aborts(tmp_path):
    # A box far too small for the packet is rejected up front by the
    # Gaussian-tail guard, surfacing as a numerical-abort exit path.
    cfg = parse_config(TINY_CONFIG.replace("length = 20.0", "length = 6.0"))
    with pytest.raises(ValueError, match="box"):
        run(cfg, tmp_path / "r")
