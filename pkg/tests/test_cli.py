import csv
import io
import json

import pytest

from annuitization.cli import main
from annuitization.model import config_to_dict

from conftest import small_config


def write_config(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(config_to_dict(cfg)))
    return str(p)


def test_solve_summary(capsys):
    assert main(["solve"]) == 0
    out = capsys.readouterr().out
    assert "Case2" in out and "closed form" in out


def test_solve_single_node(tmp_path, capsys):
    path = write_config(tmp_path, small_config(N=0))
    assert main(["solve", "--config", path]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.strip()]
    assert len(lines) == 2 and "closed form" in lines[1]


def test_solve_value_table(tmp_path):
    out = tmp_path / "v.csv"
    assert main(["solve", "--grid-points", "200", "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert list(rows[0]) == ["node_id", "n", "mu", "x", "V", "W", "M"]
    assert len(rows) == 600
    summary = json.loads((tmp_path / "v.summary.json").read_text())
    assert summary["nodes"][0]["regime"] == "Case2"


def test_ill_posed_exit_code(tmp_path, capsys):
    path = write_config(tmp_path, small_config(theta=0.3))
    assert main(["solve", "--config", path]) == 2
    assert "well-posedness" in capsys.readouterr().err


def test_config_error_exit_code(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["solve", "--config", str(bad)]) == 1
    d = config_to_dict(small_config())
    d["nu"] = 3.0
    bad.write_text(json.dumps(d))
    assert main(["solve", "--config", str(bad)]) == 1


def test_solver_failure_exit_code(capsys):
    assert main(["solve", "--x-lo", "0.01", "--x-hi", "5"]) == 3
    assert "GridExhausted" in capsys.readouterr().err


def test_calibrate(capsys):
    assert main(["calibrate", "--target", "16.2162", "--mode", "objective", "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out)["rate"] == pytest.approx(0.061667, abs=1e-5)


def test_sweep_csv(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["sweep", "--parameter", "p", "--values", "0,0.5,1", "--grid-points", "400",
                 "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert [r["value"] for r in rows] == ["0", "0.5", "1"]
    b = [float(r["threshold"]) for r in rows]
    assert b == sorted(b)


def test_simulate_is_reproducible(tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"sim{i}.csv"
        assert main(["simulate", "--x0", "15000", "--paths", "5000", "--grid-points", "400",
                     "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    row = next(csv.DictReader(io.StringIO(outs[0].decode())))
    assert abs(float(row["mean"]) - float(row["solver_value"])) < 3 * float(row["stderr"])


def test_simulate_fixed_policy(capsys):
    assert main(["simulate", "--policy", "immediately", "--x0", "5000", "--paths", "100",
                 "--format", "json"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["policy_value"]["stderr"] < 1e-12 * d["policy_value"]["mean"]


def test_verify_without_mc(capsys):
    assert main(["verify", "--no-mc", "--format", "json"]) == 0
    out = capsys.readouterr().out
    assert "suite: PASS" in out


def test_bad_arguments():
    with pytest.raises(SystemExit):
        main(["sweep", "--parameter", "theta", "--values", "1"])
