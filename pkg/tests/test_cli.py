import json

import pytest
from click.testing import CliRunner

from eqsearch.grid import read_dataset
from eqsearch.harness.cli import EXIT_CONFIG, EXIT_IO, main
from eqsearch.harness.config import load_config


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def tiny_config(tmp_path):
    cfg = load_config("burgers").to_dict()
    cfg["dataset"]["params"] = {"nt": 21}
    cfg["moeadd"].update(H=2, epochs=1)
    cfg["noise_levels"] = [0.0, 1.0]
    cfg["runs"] = 1
    cfg["output_dir"] = str(tmp_path / "default_out")
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(cfg))
    return path


def test_generate_writes_a_readable_dataset(runner, tmp_path):
    res = runner.invoke(main, ["generate", "lotka_volterra", "--out", str(tmp_path / "lv")])
    assert res.exit_code == 0, res.output
    fields = read_dataset(tmp_path / "lv")
    assert [f.var_name for f in fields] == ["u", "v"]
    assert fields[0].shape == (501,)


def test_generate_rejects_unknown_benchmark(runner, tmp_path):
    res = runner.invoke(main, ["generate", "navier_stokes", "--out", str(tmp_path)])
    assert res.exit_code != 0


def test_discover_prints_equations(runner, tiny_config, tmp_path):
    res = runner.invoke(main, ["discover", "--config", str(tiny_config), "--seed", "3",
                               "--noise", "1.0", "--out", str(tmp_path / "d")])
    assert res.exit_code == 0, res.output
    lines = res.output.splitlines()
    assert lines[0] == "# run 0 (noise 1%)"
    assert lines[1].endswith("= 0")
    assert lines[2].startswith("# matches ground truth: ")
    assert (tmp_path / "d" / "report.csv").exists()


def test_benchmark_and_report(runner, tiny_config, tmp_path):
    out = tmp_path / "b"
    res = runner.invoke(main, ["benchmark", "--config", str(tiny_config), "--out", str(out)])
    assert res.exit_code == 0, res.output
    csv_text = (out / "report.csv").read_text()
    assert len(csv_text.splitlines()) == 3
    rep = runner.invoke(main, ["report", "--in", str(out)])
    assert rep.exit_code == 0 and rep.output == csv_text
    rep = runner.invoke(main, ["report", "--in", str(out), "--format", "json"])
    assert json.loads(rep.output)["levels"][1]["noise_level"] == 1.0
    rep = runner.invoke(main, ["report", "--in", str(out), "--format", "plot"])
    assert rep.output.startswith("noise_level,series,value")


def test_benchmark_defaults_to_config_output_dir(runner, tiny_config, tmp_path):
    res = runner.invoke(main, ["benchmark", "--config", str(tiny_config), "--runs", "1"])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "default_out" / "report.csv").exists()


def test_config_errors_exit_with_2(runner, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"name": "x", "unknown": 1}))
    for args in (["discover", "--config", str(bad)],
                 ["benchmark", "--config", str(tmp_path / "missing.json")],
                 ["discover", "--config", "burgers", "--runs", "0"]):
        res = runner.invoke(main, args)
        assert res.exit_code == EXIT_CONFIG == 2, res.output
        assert "error:" in res.output


def test_io_errors_exit_with_3(runner, tmp_path):
    res = runner.invoke(main, ["report", "--in", str(tmp_path / "absent")])
    assert res.exit_code == EXIT_IO == 3
    blocker = tmp_path / "file"
    blocker.write_text("")
    res = runner.invoke(main, ["generate", "burgers", "--out", str(blocker / "sub")])
    assert res.exit_code == 3
