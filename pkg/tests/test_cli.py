import numpy as np
import pytest

from dissipative_flow.cli import main

PLAN = """
[scenario]
dim = 1
cells = 64
modes = 4
t_end = 0.25
[density]
profile = constant
[momentum]
profile = rest
[sweep]
deltas = 0.2, 0.1
eps = {eps}
modes = 4, 8
"""


def test_simulate_rest_preset(tmp_path):
    assert main(["simulate", "--preset", "rest", "--out", str(tmp_path)]) == 0
    ledger = np.loadtxt(tmp_path / "ledger.csv", delimiter=",", skiprows=1)
    assert np.all(np.abs(ledger[:, 5]) <= 1e-12)
    manifest = (tmp_path / "manifest.txt").read_text()
    for name in ("trajectory.json", "ledger.csv", "density.csv", "contraction.csv"):
        assert f"artifact.{name} = " in manifest
    assert main(["audit", "--preset", "rest", "--trajectory", str(tmp_path / "trajectory.json")]) == 0


def test_simulate_rejects_negative_eps(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[continuity]\neps = -0.5\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "continuity.eps" in capsys.readouterr().err


def test_simulate_is_byte_identical(tmp_path):
    cfg = tmp_path / "s.ini"
    cfg.write_text("[scenario]\nt_end = 0.1\nseed = 42\n[density]\nprofile = random_smooth\n")
    for run in ("a", "b"):
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / run)]) == 0
    for name in ("ledger.csv", "density.csv", "contraction.csv", "trajectory.json", "manifest.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sweep_rest_lattice(tmp_path, capsys):
    plan = tmp_path / "plan.ini"
    plan.write_text(PLAN.format(eps="0.1, 0.05"))
    assert main(["sweep", "--config", str(plan), "--out", str(tmp_path / "out"), "--workers", "2"]) == 0
    lines = (tmp_path / "out" / "summary.csv").read_text().splitlines()
    assert len(lines) == 9 and all(",PASS," in line for line in lines[1:])
    assert "weak-solution regime" in capsys.readouterr().out


def test_sweep_rejects_empty_eps(tmp_path, capsys):
    plan = tmp_path / "plan.ini"
    plan.write_text(PLAN.format(eps=""))
    assert main(["sweep", "--config", str(plan), "--out", str(tmp_path / "out")]) == 2
    assert "sweep.eps" in capsys.readouterr().err


def test_conjugate_output(capsys):
    assert main(["conjugate", "--stress", "2,0,0"]) == 0
    header, row = capsys.readouterr().out.splitlines()
    cols = dict(zip(header.split(","), row.split(",")))
    assert float(cols["value"]) == pytest.approx(2.0, abs=1e-6)
    assert main(["conjugate", "--variant", "custom", "--stress", "2,0,0"]) == 0
    assert "divergent" in capsys.readouterr().out


def test_conjugate_parse_errors(capsys):
    with pytest.raises(SystemExit) as info:
        main(["conjugate", "--mu"])
    assert info.value.code != 0
    assert "usage" in capsys.readouterr().err
    assert main(["conjugate", "--stress", "1,2"]) == 2


def test_orlicz_output(capsys):
    assert main(["orlicz", "--builtin", "ones", "--cells", "256"]) == 0
    pairs = dict(line.split(",", 1) for line in capsys.readouterr().out.splitlines()[1:])
    assert float(pairs["bound"]) == 0.0 and pairs["status"] == "ok"
    assert main(["orlicz", "--builtin", "spikes", "--cells", "4096"]) == 1
    assert "violation" in capsys.readouterr().out
