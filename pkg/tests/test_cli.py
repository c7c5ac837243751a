import json
import csv
from pathlib import Path

import numpy as np
import pytest

from nlslab import cli
from nlslab.config import ConfigError, load_config


def write_config(tmp_path, body: str) -> Path:
    path = tmp_path / "exp.toml"
    path.write_text(body)
    return path


BASE = """
[grid]
points_per_axis = 1024
box_half_length_space = 100.0

[branch]
offsets_energy = [4e-2, 5e-2, 6e-2]

[output]
directory = "{out}"
"""


def test_config_defaults_and_hash(tmp_path):
    cfg1 = load_config(None)
    cfg2 = load_config(None)
    assert cfg1.digest == cfg2.digest
    path = write_config(tmp_path, BASE.format(out=tmp_path / "runs"))
    cfg3 = load_config(path)
    assert cfg3.digest != cfg1.digest
    assert cfg3["grid"]["points_per_axis"] == 1024


def test_config_rejects_unknown_keys(tmp_path):
    path = write_config(tmp_path, "[grid]\nnumber_of_points = 12\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_usage_error_exit_code(tmp_path):
    rc = cli.main(["-c", str(tmp_path / "missing.toml"), "spectrum"])
    assert rc == cli.EXIT_USAGE


def test_spectrum_command(tmp_path):
    path = write_config(tmp_path, BASE.format(out=tmp_path / "runs"))
    rc = cli.main(["-c", str(path), "spectrum"])
    assert rc == 0
    rep = json.loads((tmp_path / "runs" / "spectrum" / "assumptions.json").read_text())
    assert rep["coupling_condition"] is True
    assert rep["coupling_margin"] == pytest.approx(1.51, abs=1e-5)
    manifest = json.loads((tmp_path / "runs" / "spectrum" / "manifest.json").read_text())
    names = {f["path"] for f in manifest["files"]}
    assert "assumptions.json" in names and "spectrum.json" in names
    assert all("sha256" in f for f in manifest["files"])


def test_spectrum_assumption_failure_exit_code(tmp_path):
    body = BASE.format(out=tmp_path / "runs") + "\n[potential]\nnu = 3.5\n"
    path = write_config(tmp_path, body)
    rc = cli.main(["-c", str(path), "spectrum"])
    assert rc == cli.EXIT_ASSUMPTION


def test_branch_command_and_cache_reuse(tmp_path):
    path = write_config(tmp_path, BASE.format(out=tmp_path / "runs"))
    assert cli.main(["-c", str(path), "branch"]) == 0
    law = json.loads((tmp_path / "runs" / "branch" / "amplitude_law.json").read_text())
    assert law["fitted_exponent"] == pytest.approx(0.5, abs=0.05)
    cache = tmp_path / "runs" / "branch_cache" / "branch.json"
    assert cache.exists()
    stamp = cache.stat().st_mtime_ns
    assert cli.main(["-c", str(path), "branch"]) == 0   # cache hit: no rebuild
    assert cache.stat().st_mtime_ns == stamp


def test_modes_command(tmp_path):
    path = write_config(tmp_path, BASE.format(out=tmp_path / "runs"))
    assert cli.main(["-c", str(path), "modes"]) == 0
    with (tmp_path / "runs" / "modes" / "modes.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    for row in rows:
        assert float(row["block_residual"]) <= 1e-8
        assert 2.0 * float(row["energy"]) > float(row["lam"])


def test_fgr_command(tmp_path):
    path = write_config(tmp_path, BASE.format(out=tmp_path / "runs"))
    assert cli.main(["-c", str(path), "fgr"]) == 0
    doc = json.loads((tmp_path / "runs" / "fgr" / "fgr.json").read_text())
    for point in doc["points"]:
        assert point["gamma_positive"]
        assert point["max_eps_defect"] <= 1e-2
        assert abs(point["theta22"]) <= 1e-9


def test_report_requires_trajectories(tmp_path):
    path = write_config(tmp_path, BASE.format(out=tmp_path / "runs"))
    (tmp_path / "empty").mkdir()
    rc = cli.main(["-c", str(path), "report", str(tmp_path / "empty")])
    assert rc == cli.EXIT_USAGE


def test_csv_rfc4180_line_endings(tmp_path):
    from nlslab.artifacts import write_csv
    out = write_csv(tmp_path / "x.csv", ["a", "b"], [[1, 2.5], [3, 4.0]])
    raw = out.read_bytes()
    assert b"\r\n" in raw
    reader = csv.reader(out.open())
    assert next(reader) == ["a", "b"]


def test_csv_deterministic_reemit(tmp_path):
    from nlslab.artifacts import write_csv
    rows = [[0.1 * k, np.float64(k) ** 0.5] for k in range(20)]
    a = write_csv(tmp_path / "a.csv", ["t", "v"], rows).read_bytes()
    b = write_csv(tmp_path / "b.csv", ["t", "v"], rows).read_bytes()
    assert a == b
