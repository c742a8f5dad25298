from __future__ import annotations

import csv
import json
import shutil
import subprocess

import pytest

from pointkg import cli
from pointkg.cli import git_blob_sha1, main
from pointkg.scenarios import scenario_to_json, shipped_scenario


def _scenario_file(tmp_path, name, horizon, energy_times=(), snapshots=(), run_extra=None):
    raw = scenario_to_json(shipped_scenario(name))
    raw["run"]["horizon"] = horizon
    raw["run"].update(run_extra or {})
    raw["energy"]["times"] = list(energy_times)
    raw["energy"]["resolution"] = 16
    raw["snapshots"]["times"] = list(snapshots)
    raw["snapshots"]["resolution"] = 4
    raw["residual_times"] = []
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(raw, indent=2))
    return path


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_zero_run(tmp_path):
    scen = _scenario_file(tmp_path, "zero", 1.0, energy_times=(0.0, 1.0))
    out = tmp_path / "out"
    assert main(["--scenario", str(scen), "--out", str(out)]) == 0
    rows = _read_csv(out / "charges.csv")
    assert len(rows) == 101
    assert all(float(v) == 0.0 for row in rows for k, v in row.items() if k != "t")
    assert _manifest(out)["status"] == 0


def test_static_run_invariants(tmp_path):
    scen = _scenario_file(tmp_path, "static", 1.0, energy_times=(0.0, 0.5, 1.0), snapshots=(1.0,))
    out = tmp_path / "out"
    assert main(["--scenario", str(scen), "--out", str(out)]) == 0
    totals = [float(r["total"]) for r in _read_csv(out / "energy.csv")]
    assert max(abs(t - 0.25) for t in totals) <= 1e-10
    man = _manifest(out)
    assert man["invariants"]["apriori_bound"] and man["invariants"]["energy_drift"]
    assert man["invariants"]["coercivity_sampled"]["passed"]
    snap = (out / man["snapshots"][0]).read_text().splitlines()
    assert snap[0].startswith("#") and len([s for s in snap if not s.startswith("#")]) == 1 + 4 ** 3


def test_validation_failure_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "system": {"mass": 0.0, "points": [[0, 0, 0]]}\n}\n')
    assert main(["--scenario", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "bad.json:2" in capsys.readouterr().err


def test_solver_failure_exit_code(tmp_path, capsys):
    scen = _scenario_file(tmp_path, "two_site", 0.5,
                          run_extra={"max_fixed_point_iters": 1, "max_halvings": 0})
    out = tmp_path / "out"
    assert main(["--scenario", str(scen), "--out", str(out)]) == 3
    assert "solver failure" in capsys.readouterr().err
    assert "diagnostics" in json.loads((out / "failure.json").read_text())


def test_convergence_flag(tmp_path):
    scen = _scenario_file(tmp_path, "static", 0.5)
    out = tmp_path / "out"
    assert main(["--scenario", str(scen), "--out", str(out), "--convergence", "4e-3,2e-3,1e-3"]) == 0
    assert _manifest(out)["convergence"]["status"] == "saturated"


def test_oracle_flag(tmp_path):
    scen = _scenario_file(tmp_path, "linear", 0.3)
    out = tmp_path / "out"
    assert main(["--scenario", str(scen), "--out", str(out), "--oracle"]) == 0
    man = _manifest(out)
    assert man["oracle"]["passed"] and man["oracle"]["horizon"] == 0.3
    assert (out / "oracle" / "charges.csv").exists()


def test_threads_do_not_change_outputs(tmp_path):
    scen = _scenario_file(tmp_path, "linear", 0.5, energy_times=(0.0, 0.5), snapshots=(0.5,))
    outs = []
    for threads in ("1", "2"):
        out = tmp_path / f"out{threads}"
        assert main(["--scenario", str(scen), "--out", str(out), "--threads", threads]) == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == sorted(p.name for p in outs[1].iterdir())
    for name in names:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_manifest_hash_matches_git(tmp_path):
    scen = _scenario_file(tmp_path, "zero", 0.2)
    out = tmp_path / "out"
    assert main(["--scenario", str(scen), "--out", str(out)]) == 0
    sha = _manifest(out)["scenario_sha1"]
    assert sha == git_blob_sha1(scen.read_bytes())
    if shutil.which("git"):
        assert sha == subprocess.check_output(["git", "hash-object", str(scen)], text=True).strip()


def test_shipped_name_resolves(tmp_path, monkeypatch):
    seen = {}

    def fake_run(sc, flags):
        seen["name"] = sc.name
        return cli.RunOutcome(0)

    monkeypatch.chdir(tmp_path)
    monkeypatch.setattr(cli, "run_scenario", fake_run)
    assert main(["--scenario", "static", "--out", str(tmp_path / "o")]) == 0
    assert seen["name"] == "static"
    with pytest.raises(SystemExit):
        main(["--scenario", "static"])


def test_binary_snapshot_matches_text(tmp_path):
    import struct

    import numpy as np

    text_scen = _scenario_file(tmp_path, "linear", 0.5, snapshots=(0.5,))
    raw = json.loads(text_scen.read_text())
    raw["snapshots"]["binary"] = True
    bin_scen = tmp_path / "linear_bin.json"
    bin_scen.write_text(json.dumps(raw))
    assert main(["--scenario", str(text_scen), "--out", str(tmp_path / "txt")]) == 0
    assert main(["--scenario", str(bin_scen), "--out", str(tmp_path / "bin")]) == 0
    blob = (tmp_path / "bin" / "snapshot_t0.5.bin").read_bytes()
    (hlen,) = struct.unpack("<I", blob[:4])
    assert blob[4:4 + hlen].decode().startswith("# time 0.5")
    packed = np.frombuffer(blob[4 + hlen:], dtype="<f8").reshape(-1, 5)
    lines = [l for l in (tmp_path / "txt" / "snapshot_t0.5.txt").read_text().splitlines() if not l.startswith("#")]
    rows = np.array([[float(v) for v in l.split(",")] for l in lines[1:]])
    assert np.array_equal(packed, rows)


def test_requested_residual_times_recorded(tmp_path):
    scen = _scenario_file(tmp_path, "linear", 0.5)
    raw = json.loads(scen.read_text())
    raw["residual_times"] = [0.25, 0.5]
    scen.write_text(json.dumps(raw))
    out = tmp_path / "out"
    assert main(["--scenario", str(scen), "--out", str(out)]) == 0
    res = _manifest(out)["residuals"]
    assert res["times"] == [0.25, 0.5] and len(res["abs"]) == 2
    assert max(max(r) for r in res["abs"]) <= 5e-6
