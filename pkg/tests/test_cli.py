import hashlib
import json
import subprocess
import sys

import pytest
from click.testing import CliRunner

from mavpick import cli as cli_mod
from mavpick.cli import OUT_ENV, cli
from mavpick.sim import BUILTINS


@pytest.fixture
def runner():
    return CliRunner()


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_list(runner):
    res = runner.invoke(cli, ["list"])
    assert res.exit_code == 0
    names = [line.split()[0] for line in res.output.splitlines()]
    assert len(names) == 6 and set(names) == set(BUILTINS)
    assert "collision" in names and "full-arena" in names


def test_run_collision_and_determinism(runner, tmp_path):
    args = ["run", "--scenario", "collision", "--seed", "7", "--quiet"]
    r1 = runner.invoke(cli, args + ["--out", str(tmp_path / "a")])
    r2 = runner.invoke(cli, args + ["--out", str(tmp_path / "b")])
    assert r1.exit_code == 0 and r2.exit_code == 0 and r1.output == ""
    m = tmp_path / "a" / "metrics.json"
    assert json.loads(m.read_text())["seed"] == 7
    assert sha(m) == sha(tmp_path / "b" / "metrics.json")


def test_run_prints_summary(runner, tmp_path):
    res = runner.invoke(cli, ["run", "--scenario", "static-pickup", "--out", str(tmp_path)])
    assert res.exit_code == 0
    assert "objects_delivered: 1" in res.output and "wall_time" in res.output


def test_env_default_out(runner, tmp_path):
    res = runner.invoke(cli, ["run", "--scenario", "static-pickup", "--quiet"],
                        env={OUT_ENV: str(tmp_path / "envout")})
    assert res.exit_code == 0
    assert (tmp_path / "envout" / "metrics.json").is_file()


def test_malformed_file_exit_2(runner, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"name": "x", "duration": -1, "surprise": True}))
    res = runner.invoke(cli, ["run", "--scenario", str(bad), "--out", str(tmp_path / "o")])
    assert res.exit_code == 2
    assert "duration" in res.output and "surprise" in res.output
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert runner.invoke(cli, ["run", "--scenario", str(broken)]).exit_code == 2
    assert runner.invoke(cli, ["run", "--scenario", "nope"]).exit_code == 2
    assert runner.invoke(cli, ["run", "--scenario", "collision", "--seed", "-1"]).exit_code == 2


def test_unwritable_out_exit_2(runner, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    res = runner.invoke(cli, ["run", "--scenario", "static-pickup", "--out", str(blocker / "sub")])
    assert res.exit_code == 2


def test_runtime_failure_exit_3(runner, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("kaboom")

    monkeypatch.setattr(cli_mod, "sim_run", boom)
    res = runner.invoke(cli, ["run", "--scenario", "collision", "--out", str(tmp_path)])
    assert res.exit_code == 3 and "kaboom" in res.output


def test_detection_map_rows(runner, tmp_path):
    res = runner.invoke(cli, ["detection-map", "--out", str(tmp_path), "--altitude", "5",
                              "--altitude", "10", "--grid", "4", "3", "--quiet"])
    assert res.exit_code == 0
    lines = (tmp_path / "detection_map.csv").read_text().splitlines()
    assert lines[0] == "altitude,row,col,u,v,x,y,error,error_pct"
    assert len(lines) - 1 == 4 * 3 * 2
    summary = json.loads((tmp_path / "metrics.json").read_text())
    assert summary["cells"] == 24
    assert runner.invoke(cli, ["detection-map", "--altitude", "-1"]).exit_code == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "mavpick.cli", "list"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and len(res.stdout.splitlines()) == 6
