import json

import pytest

from twistshrink.errors import ResourceError

from twistshrink.cli import main


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path), "--jobs", "1"])


def test_simulate_writes_config_echo(tmp_path):
    assert run(tmp_path, "simulate", "--preset", "gbm", "--m", "3", "--seed", "1") == 0
    first = (tmp_path / "path.csv").read_text().splitlines()[0]
    cfg = json.loads(first[len("# config: "):])
    assert cfg["m"] == 3 and cfg["M"] == 7 and cfg["a"] == 1.0
    assert json.loads((tmp_path / "path.json").read_text())["config"]["seed"] == 1


def test_bit_identical_reruns(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run(a, "counterexample", "--m", "3", "--seed", "7")
    run(b, "counterexample", "--m", "3", "--seed", "7")
    assert (a / "counterexample.csv").read_bytes() == (b / "counterexample.csv").read_bytes()


def test_config_file_and_set(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"preset": "ou", "m": 2, "c": -2}))
    assert run(tmp_path, "simulate", "--config", str(cfg), "--set", "T=0.5") == 0
    echo = json.loads((tmp_path / "path.json").read_text())["config"]
    assert echo["preset"] == "ou" and echo["c"] == -2.0 and echo["T"] == 0.5


def test_expression_config(tmp_path):
    assert run(tmp_path, "simulate", "--mu=-x", "--sigma", "1 + 0*x", "--x0", "0", "--m", "2") == 0


def test_unknown_key_exit_2(tmp_path, capsys):
    assert run(tmp_path, "simulate", "--set", "nope=1") == 2
    rec = json.loads(capsys.readouterr().err.strip())
    assert rec["error"] == "config" and "valid keys" in rec["message"]


def test_positivity_exit_3(tmp_path, capsys):
    code = run(tmp_path, "simulate", "--mu", "0", "--sigma", "x - 2*t", "--x0", "1", "--m", "2")
    assert code == 3
    rec = json.loads(capsys.readouterr().err.strip())
    assert rec["error"] == "positivity" and "t" in rec


def test_resource_exit_4(tmp_path, capsys, monkeypatch):
    from twistshrink import cli

    def boom(*a, **k):
        raise ResourceError("walk exhausted", level=3, shortfall=5)

    monkeypatch.setattr(cli.verify, "convergence_study", boom)
    assert run(tmp_path, "converge", "--levels", "2..3", "--seeds", "1") == 4
    rec = json.loads(capsys.readouterr().err.strip())
    assert rec["shortfall"] == 5


def test_env_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("TWISTSHRINK_OUT", str(tmp_path / "envout"))
    monkeypatch.setenv("TWISTSHRINK_JOBS", "2")
    assert main(["ensemble", "--m", "2", "--N", "50"]) == 0
    assert (tmp_path / "envout" / "ensemble.csv").exists()


@pytest.mark.parametrize("cmd,extra,artifact", [
    ("twist-demo", ["--m", "4"], "walks.csv"),
    ("verify-martingale", ["--m", "2", "--N", "500", "--n-enum", "6"], "martingale.json"),
    ("verify-residual", ["--levels", "2..4", "--seeds", "2", "--local-drift"], "residual.json"),
    ("verify-distribution", ["--preset", "ou", "--m", "3", "--N", "200"], "distribution.json"),
    ("converge", ["--levels", "2..3", "--M", "6", "--seeds", "2"], "converge.csv"),
])
def test_subcommands(tmp_path, cmd, extra, artifact):
    assert run(tmp_path, cmd, *extra) == 0
    assert (tmp_path / artifact).exists()


def test_help_mentions_defaults(capsys):
    with pytest.raises(SystemExit):
        main(["simulate", "--help"])
    assert "m=5" in capsys.readouterr().out
