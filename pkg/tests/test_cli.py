from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pytest

from fracdelay.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

ZERO_DYNAMICS = """
alpha: 0.5
T: 1.0
h: 0.25
N: 16
n: 1
r: 1
y0: [0.7]
dynamics.kind: linear_delay
cost.terminal: linear
cost.coef: [1.0]
control.lower: -1
control.upper: 1
"""


@pytest.fixture(autouse=True)
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def test_solve_example2(capsys, workdir):
    assert main(["solve", "--config", str(CONFIGS / "ex2.yaml"), "--control", "-0.5", "--N", "400"]) == 0
    out = capsys.readouterr().out
    J = float(out.split("J = ")[1].split()[0])
    assert J == pytest.approx(-0.125, abs=1e-3)
    assert (workdir / "trajectory.csv").is_file()
    manifest = json.loads((workdir / "trajectory.csv.manifest.json").read_text())
    assert manifest["command"] == "solve" and manifest["grid"]["N"] == 400
    assert all(Path(p).is_file() for p in manifest["outputs"])


def test_solve_zero_dynamics_is_constant(workdir):
    cfg = workdir / "zero.yaml"
    cfg.write_text(ZERO_DYNAMICS)
    assert main(["solve", "--config", str(cfg), "--control", "0.3", "--out", "z.csv"]) == 0
    data = np.loadtxt(workdir / "z.csv", delimiter=",", skiprows=2)
    np.testing.assert_array_equal(data[:, 1], 0.7)


def test_solve_with_control_file(workdir):
    assert main(["solve", "--example", "ex2", "--N", "20", "--control", "-0.5", "--out", "a.csv"]) == 0
    u = workdir / "u.csv"
    u.write_text("# fracdelay control v1\nt_start,u_1\n" + "".join(f"{k / 20:.12g},-0.5\n" for k in range(20)))
    assert main(["solve", "--example", "ex2", "--N", "20", "--control", str(u), "--out", "b.csv"]) == 0
    assert (workdir / "a.csv").read_bytes() == (workdir / "b.csv").read_bytes()


def test_usage_errors_exit_2(capsys, workdir):
    assert main(["solve", "--config", "missing.yaml"]) == 2
    assert "missing.yaml" in capsys.readouterr().err
    assert main(["solve"]) == 2
    assert main(["solve", "--example", "ex1", "--config", str(CONFIGS / "ex1.yaml")]) == 2
    bad = workdir / "bad.yaml"
    bad.write_text(ZERO_DYNAMICS.replace("alpha: 0.5", "alpha: 2"))
    assert main(["solve", "--config", str(bad)]) == 2
    assert "alpha" in capsys.readouterr().err
    assert main(["solve", "--example", "ex1", "--control", "3.0"]) == 2
    assert main(["solve", "--example", "ex1", "--control", "nope.csv"]) == 2


def test_check_verdicts(capsys, workdir):
    assert main(["check", "--config", str(CONFIGS / "ex1.yaml")]) == 1
    assert "first-order maximum condition violated" in capsys.readouterr().out
    assert main(["check", "--config", str(CONFIGS / "ex2.yaml"), "--out", "c2.csv"]) == 1
    assert "second-order condition violated on singular control" in capsys.readouterr().out
    lines = (workdir / "c2.csv").read_text().splitlines()
    assert lines[0] == "# fracdelay conditions v1"
    cfg = workdir / "single.yaml"
    cfg.write_text((CONFIGS / "ex2.yaml").read_text()
                   .replace("control.lower: [-1.0]", "control.lower: [0.0]")
                   .replace("control.upper: [1.0]", "control.upper: [0.0]"))
    assert main(["check", "--config", str(cfg)]) == 0


def test_check_tolerance_flags_reach_the_report(workdir):
    assert main(["check", "--example", "ex2", "--N", "40", "--tol-2nd", "1e3", "--out", "c.csv"]) == 0
    text = (workdir / "c.csv").read_text()
    assert "# tol_2nd: 1000" in text
    manifest = json.loads((workdir / "c.csv.manifest.json").read_text())
    assert manifest["tolerances"]["tol_2nd"] == 1000.0


def test_adjoint_command(capsys, workdir):
    assert main(["adjoint", "--example", "ex1", "--N", "200"]) == 0
    out = capsys.readouterr().out
    psi0 = [float(x) for x in out.split("psi(0) = ")[1].split()[:2]]
    assert psi0[1] == pytest.approx(-math.sqrt(math.pi), abs=1e-9)
    assert (workdir / "adjoint.csv").is_file()


def test_spike_command(workdir):
    assert main(["spike", "--example", "ex1", "--N", "200", "--theta", "0.25", "--v", "-1"]) == 0
    data = np.loadtxt(workdir / "spike.csv", delimiter=",", skiprows=2)
    assert data.shape == (3, 5) and np.all(data[:, 1] < 0)
    assert main(["spike", "--example", "ex1", "--N", "200", "--theta", "0.95", "--v", "-1"]) == 2
    assert main(["spike", "--example", "ex1", "--N", "200", "--v", "-1"]) == 2


def test_example_command(workdir):
    assert main(["example", "ex1"]) == 0
    lines = (workdir / "ex1_example.csv").read_text().splitlines()
    assert lines[0] == "check,value,threshold,status"
    assert all(ln.endswith("PASS") for ln in lines[1:]) and len(lines) == 4
    assert main(["example", "ex2", "--alpha", "0.3", "--N", "400", "--out", "e2.csv"]) == 0
    assert main(["example", "ex7"]) == 2


def test_convergence_command(workdir):
    assert main(["convergence", "--ladder", "50,100,200"]) == 0
    data = np.loadtxt(workdir / "convergence.csv", delimiter=",", skiprows=1)
    assert np.all(data[1:, 2] >= 1.0)


def test_outputs_are_reproducible(workdir):
    for name in ("one.csv", "two.csv"):
        assert main(["check", "--example", "ex1", "--N", "40", "--out", name]) == 1
    assert (workdir / "one.csv").read_bytes() == (workdir / "two.csv").read_bytes()
