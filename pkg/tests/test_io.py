import json

import numpy as np

from dissipative_flow import io as artifacts
from dissipative_flow.energy import energy_audit
from dissipative_flow.scenario import preset
from dissipative_flow.solver import solver_for


def test_fmt_full_precision():
    assert artifacts.fmt(0.1) == "1.00000000000000006e-01"
    assert float(artifacts.fmt(np.pi)) == np.pi
    assert artifacts.fmt(float("inf")) == "inf" and artifacts.fmt(True) == "true"


def test_artifacts_roundtrip(tmp_path):
    sc = preset("single_mode").with_params(t_end=0.1)
    est = solver_for(sc).fit(sc.initial_data())
    traj = est.trajectory_
    artifacts.write_trajectory_json(traj, tmp_path / "t.json", sc.digest())
    data = json.loads((tmp_path / "t.json").read_text())
    assert data["config_sha256"] == sc.digest()
    assert np.array_equal(np.array([s["coeffs"] for s in data["snapshots"]]), traj.coeffs)
    ledger = energy_audit(traj)
    artifacts.write_ledger_csv(ledger, tmp_path / "l.csv")
    back = np.loadtxt(tmp_path / "l.csv", delimiter=",", skiprows=1)
    assert np.array_equal(back, ledger.rows())
    artifacts.write_manifest(tmp_path / "m.txt", sc.digest(), {"l.csv": tmp_path / "l.csv"},
                             {"energy": "PASS"})
    text = (tmp_path / "m.txt").read_text()
    assert f"config_sha256 = {sc.digest()}" in text
    assert artifacts.sha256_file(tmp_path / "l.csv") in text
