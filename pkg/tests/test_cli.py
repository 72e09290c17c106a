import json
import os
import subprocess
import sys

import pytest

from darcyvi.cli import build_parser, main


def test_hconv_from_config(tmp_path, capsys):
    cfg = tmp_path / "run.toml"
    cfg.write_text("levels = [4, 8, 16]\n")
    assert main(["run", "hconv", "--config", str(cfg), "--formulation", "rt0", "--beta", "0"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert list(out) == ["0.0"] and len(out["0.0"]["err_u"]) == 3


def test_square_summary(tmp_path, capsys):
    rc = main(["run", "square", "--h", "10", "--beta", "1e-10", "--formulation", "vms",
               "--out", str(tmp_path / "o")])
    assert rc == 0
    out = json.loads(capsys.readouterr().out)
    assert out["table"]["formulation"] == "VMS" and out["table"]["violations_after"] == 0
    assert "bounds" in out and any((tmp_path / "o").glob("*.vtu"))


def test_bad_config_returns_2(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("unknown_knob = 3\n")
    assert main(["run", "square", "--config", str(cfg)]) == 2
    assert "unknown config keys" in capsys.readouterr().err
    assert main(["run", "square", "--config", str(tmp_path / "missing.toml")]) == 2
    assert main(["run", "box3d", "--formulation", "vms"]) == 2


def test_parser_rejects_unknown_preset():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["run", "cube"])


def test_module_entry_point():
    env = dict(os.environ)
    r = subprocess.run([sys.executable, "-m", "darcyvi", "--help"], capture_output=True, text=True, env=env)
    assert r.returncode == 0 and "run" in r.stdout
