import csv
import json
from pathlib import Path

import numpy as np
import pytest

from vortasym import cli
from vortasym import evolution as ev

SMALL_RUN = """
[grid]
points_per_axis = 24
half_width = 8.0
[initial]
field = random:width=1.2
amplitude = 0.02
seed = {seed}
[time]
dt = 0.01
t_end = {t_end}
[diagnostics]
m = 4
diagnostics_stride = 1
residual_weights = 4
"""


def _write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _simulate(tmp_path, text, registry="runs", capsys=None):
    cfg = _write(tmp_path, text)
    code = cli.main(["--registry", str(tmp_path / registry), "simulate", str(cfg)])
    out = capsys.readouterr().out if capsys else ""
    return code, out


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.ini"
    cfg.write_text(SMALL_RUN.format(seed=3, t_end=0.3))
    assert cli.main(["--registry", str(root / "runs"), "simulate", str(cfg)]) == 0
    (run_dir,) = (root / "runs").iterdir()
    return root, run_dir


# ------------------------------------------------------------------ config

def test_template_parses_back_to_defaults():
    cfg = cli.parse_config(cli.documented_config())
    assert cfg.to_dict() == ev.RunConfig().to_dict()


def test_every_schema_key_is_documented():
    text = cli.documented_config()
    for section, keys in cli.SCHEMA.items():
        assert f"[{section}]" in text
        for key in keys:
            assert f"\n{key} = " in text


def test_unknown_keys_are_listed_exhaustively():
    with pytest.raises(cli.ConfigError) as err:
        cli.parse_config("[grid]\npoints = 3\n[time]\nspeed = 1\n[colour]\nx = 1\n")
    msg = str(err.value)
    for name in ("grid.points", "time.speed", "[colour]"):
        assert name in msg


def test_bad_values_are_reported():
    with pytest.raises(cli.ConfigError, match="time.dt"):
        cli.parse_config("[time]\ndt = fast\n")
    with pytest.raises(cli.ConfigError, match="integer"):
        cli.parse_config("[time]\ndt = 0.3\nt_end = 1.0\n")


def test_unknown_key_exits_with_config_error(tmp_path, capsys):
    code, _ = _simulate(tmp_path, "[grid]\nresolution = 5\n")
    assert code == cli.EXIT_CONFIG
    assert "grid.resolution" in capsys.readouterr().err


def test_run_id_is_reproducible_and_config_sensitive():
    a = cli.parse_config(SMALL_RUN.format(seed=1, t_end=0.1))
    b = cli.parse_config(SMALL_RUN.format(seed=1, t_end=0.1))
    c = cli.parse_config(SMALL_RUN.format(seed=2, t_end=0.1))
    assert cli.run_id_for(a) == cli.run_id_for(b) != cli.run_id_for(c)


# ---------------------------------------------------------------- simulate

def test_minimal_zero_run(tmp_path, capsys):
    code, out = _simulate(tmp_path, "[initial]\nfield = zero\n[grid]\npoints_per_axis = 16\n[time]\nt_end = 0\n", capsys=capsys)
    assert code == 0
    info = json.loads(out)
    manifest = cli.load_manifest(Path(info["directory"]))
    assert manifest["status"] == "completed"
    traj = ev.Trajectory.load(info["directory"])
    assert len(traj.snapshots) == 1


def test_simulate_writes_series_and_checksummed_manifest(small_run):
    _, run_dir = small_run
    manifest = cli.load_manifest(run_dir)
    assert manifest["status"] == "completed"
    assert manifest["run_id"] == run_dir.name
    names = {a["path"] for a in manifest["artifacts"]}
    assert "series.csv" in names
    assert cli.verify_artifacts(run_dir, manifest) == []
    with open(run_dir / "series.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "time" and len(rows) == 32
    assert "run" in manifest["timings"]


def test_manifest_round_trip(tmp_path):
    m = {"run_id": "abc", "status": "completed", "artifacts": [], "config": {"n": 8}, "timings": {"run": 1.5}}
    cli.write_manifest(tmp_path, m)
    assert cli.load_manifest(tmp_path) == m


def test_aborted_run_is_recorded(tmp_path, capsys):
    text = SMALL_RUN.format(seed=0, t_end=0.1) + "[numerics]\ncfl_limit = 1e-9\n"
    code, out = _simulate(tmp_path, text, capsys=capsys)
    assert code == cli.EXIT_ABORT
    info = json.loads(out)
    manifest = cli.load_manifest(Path(info["directory"]))
    assert manifest["status"] == "aborted"
    assert manifest["message"]


def test_same_config_gives_identical_series(tmp_path, small_run):
    root, run_dir = small_run
    cfg = _write(tmp_path, SMALL_RUN.format(seed=3, t_end=0.3))
    assert cli.main(["--registry", str(tmp_path / "again"), "simulate", str(cfg)]) == 0
    other = tmp_path / "again" / run_dir.name
    assert (other / "series.csv").read_bytes() == (run_dir / "series.csv").read_bytes()


# ---------------------------------------------------------------- diagnose

def test_diagnose_writes_json_and_csv(small_run, capsys):
    root, run_dir = small_run
    assert cli.main(["--registry", str(root / "runs"), "diagnose", run_dir.name, "--m", "4", "--window", "0.1", "0.3"]) == 0
    files = json.loads(capsys.readouterr().out)["files"]
    assert "report.json" in files and "moments.csv" in files
    report = json.loads((run_dir / "diagnostics" / "report.json").read_text())
    assert report["partial"] is False
    assert set(report["ode_residuals"]) >= {"beta", "gamma", "zeta"}
    assert "residual_order1_m4" in report["fits"]


def test_rediagnose_is_byte_identical(small_run):
    _, run_dir = small_run
    cli.diagnose_run(run_dir, (4.0,), (0.1, 0.3))
    first = {p.name: p.read_bytes() for p in (run_dir / "diagnostics").iterdir()}
    cli.diagnose_run(run_dir, (4.0,), (0.1, 0.3))
    second = {p.name: p.read_bytes() for p in (run_dir / "diagnostics").iterdir()}
    assert first == second


def test_diagnose_of_aborted_run_is_flagged_partial(tmp_path, capsys):
    text = SMALL_RUN.format(seed=0, t_end=0.1) + "[numerics]\ncfl_limit = 1e-9\n"
    _, out = _simulate(tmp_path, text, capsys=capsys)
    report = cli.diagnose_run(Path(json.loads(out)["directory"]))
    assert report["partial"] is True


def test_corrupt_artifact_is_named(tmp_path, capsys):
    code, out = _simulate(tmp_path, SMALL_RUN.format(seed=5, t_end=0.05), capsys=capsys)
    run_dir = Path(json.loads(out)["directory"])
    with open(run_dir / "series.csv", "a") as fh:
        fh.write("tampered\n")
    (run_dir / "trajectory.json").unlink()
    code = cli.main(["--registry", str(tmp_path / "runs"), "diagnose", str(run_dir)])
    err = capsys.readouterr().err
    assert code == cli.EXIT_CONFIG
    assert "series.csv: checksum mismatch" in err
    assert "trajectory.json: missing" in err


def test_missing_run_is_an_error(tmp_path, capsys):
    assert cli.main(["--registry", str(tmp_path), "diagnose", "nope"]) == cli.EXIT_CONFIG
    assert "nope" in capsys.readouterr().err


# ------------------------------------------------------------ other checks

def test_basis_check_csv(tmp_path):
    out = tmp_path / "basis.csv"
    assert cli.main(["basis-check", "--n", "32", "--half-width", "10", "--output", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    kinds = {r["quantity"] for r in rows}
    assert {"gram_max_deviation", "gram_entry", "eigen_residual", "adjoint_eigen_residual", "paired_gram_determinant"} <= kinds
    eig = [r for r in rows if r["quantity"] == "eigen_residual"]
    assert len(eig) == 11
    dev = {r["label"]: float(r["value"]) for r in rows if r["quantity"] == "gram_max_deviation"}
    assert set(dev) == {"p-f", "q-g", "r-h", "r-g", "q-h", "p-g"}
    assert max(dev.values()) < 1e-3


def test_semigroup_check_tracks_eigen_decay(tmp_path):
    out = tmp_path / "sg.csv"
    assert cli.main(["semigroup-check", "--n", "40", "--half-width", "8", "--taus", "0.5", "1", "--output", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    for r in rows:
        if r["field"] in ("f1", "g1", "h12"):
            assert float(r["max_relative_error"]) < 1e-5
            assert float(r["weighted_norm"]) == pytest.approx(float(r["predicted_norm"]), rel=1e-4)
    assert sum(r["field"] == "W1-remainder" for r in rows) == 2


def test_manifold_test_json(small_run, tmp_path):
    root, run_dir = small_run
    # the small run starts in W_0 only; a zero run is a valid W_1 datum
    zero = _write(tmp_path, "[initial]\nfield = zero\n[grid]\npoints_per_axis = 16\n[time]\ndt = 0.1\nt_end = 3\n[diagnostics]\nm = 5\ndiagnostics_stride = 1\n")
    assert cli.main(["--registry", str(tmp_path / "runs"), "simulate", str(zero)]) == 0
    (zdir,) = (tmp_path / "runs").iterdir()
    out = tmp_path / "mf.json"
    assert cli.main(["manifold-test", str(zdir), "--window", "1", "3", "--output", str(out)]) == 0
    rep = json.loads(out.read_text())
    ss = rep["strong_stable"]
    assert ss["agree"] and ss["verdict"] is True
    assert ss["conditions_tested"]["total"] == 11
    assert rep["miyakawa_schonbek"]["verdict"] is True
    # a datum with beta != 0 is outside the precondition
    assert cli.main(["manifold-test", str(run_dir)]) == cli.EXIT_CONFIG


def test_hls_sample_json(tmp_path):
    out = tmp_path / "hls.json"
    assert cli.main(["hls-sample", "--m", "1.0", "--regime", "1", "--count", "3", "--n", "16", "--output", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["regime"] == 1 and rep["count"] == 3


def test_hls_sample_rejects_regime_mismatch(capsys):
    assert cli.main(["hls-sample", "--m", "1.0", "--regime", "3", "--count", "2", "--n", "16"]) == cli.EXIT_CONFIG


def test_report_single_run_one_row(small_run, tmp_path, capsys):
    _, run_dir = small_run
    out = tmp_path / "report.csv"
    assert cli.main(["report", str(run_dir), "--window", "0.1", "0.3", "--output", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 1
    assert float(rows[0]["continuous_spectrum_edge"]) == pytest.approx(0.25 - 4 / 2)
    assert rows[0]["run_id"] in capsys.readouterr().out


def test_report_annotates_each_m(tmp_path):
    dirs = []
    for m in (4, 5):
        text = "[initial]\nfield = zero\n[grid]\npoints_per_axis = 16\n[time]\ndt = 0.1\nt_end = 0.3\n" f"[diagnostics]\nm = {m}\ndiagnostics_stride = 1\n"
        cfg = _write(tmp_path, text, f"m{m}.ini")
        cli.main(["--registry", str(tmp_path / "runs"), "simulate", str(cfg)])
    dirs = sorted((tmp_path / "runs").iterdir())
    rows = cli.report_rows(dirs)
    assert sorted(r["continuous_spectrum_edge"] for r in rows) == [0.25 - 5 / 2, 0.25 - 4 / 2]


def test_report_rejects_empty_list(capsys):
    assert cli.main(["report"]) == cli.EXIT_CONFIG


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.strip() == cli.__version__
