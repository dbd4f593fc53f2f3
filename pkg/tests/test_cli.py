import json
import subprocess
import sys

import pytest

from alphanoma.cli import (DEFAULTS, UsageError, build_config, build_parser,
                           build_spec, load_config_file, main, parse_config)
from alphanoma.experiment import read_rows
from alphanoma.model import ConfigError


def _settings(*argv):
    return parse_config(build_parser().parse_args(["solve-stat", *argv]))


def test_empty_input_gives_defaults():
    s = parse_config()
    assert s == DEFAULTS
    cfg = build_config(s)
    assert cfg.K == 6 and cfg.P == pytest.approx(100.0) and cfg.r0 == 0.9
    assert cfg.alpha == 1.0 and cfg.beta == 2.0
    assert cfg.distances == pytest.approx([1.5 ** (6 - k) for k in range(1, 7)])


def test_snr_flag_sets_power():
    assert build_config(_settings("--snr-db", "30")).P == pytest.approx(1000.0)


def test_increasing_distances_rejected(capsys):
    with pytest.raises(ConfigError):
        build_config(_settings("--k", "2", "--distances", "1,2"))
    assert main(["solve-stat", "--k", "2", "--distances", "1,2"]) == 2
    assert "config error" in capsys.readouterr().err


def test_precedence_flags_over_file_over_defaults(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("k: 4\nr0: 0.5\nalpha: 2\n")
    s = _settings("--config", str(path), "--k", "3")
    assert s["k"] == 3 and s["r0"] == 0.5 and s["alpha"] == 2
    assert s["snr_db"] == 20.0


def test_preset_scenario_sits_below_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("k: 3\n")
    s = _settings("--preset", "fig5", "--config", str(path))
    assert s["k"] == 3
    assert _settings("--preset", "fig5")["k"] == 5


@pytest.mark.parametrize("text", ["bogus: 1\n", "- 1\n- 2\n", "k: [1\n"])
def test_bad_config_files(tmp_path, text):
    path = tmp_path / "bad.yaml"
    path.write_text(text)
    with pytest.raises(UsageError):
        load_config_file(path)
    assert main(["solve-stat", "--config", str(path)]) == 2


def test_missing_config_file(tmp_path):
    assert main(["solve-stat", "--config", str(tmp_path / "nope.yaml")]) == 2


@pytest.mark.parametrize("argv", [["--k", "0"], ["--r0", "-1"], ["--alpha", "-2"],
                                  ["--k", "3", "--distances", "3,2"]])
def test_invalid_scenarios_exit_2(argv):
    assert main(["solve-stat", *argv]) == 2


def test_build_spec_from_flags():
    s = parse_config(build_parser().parse_args(
        ["experiment", "--sweep", "alpha=0.5,1,2", "--regime", "statistical",
         "--scheme", "tdma-opt"]))
    spec = build_spec(s)
    assert spec.sweep_axis == "alpha" and spec.sweep_values == (0.5, 1.0, 2.0)
    assert spec.schemes == ("tdma-opt",)
    with pytest.raises(UsageError):
        build_spec(dict(s, sweep="alpha"))


def test_solve_stat_json(tmp_path):
    out = tmp_path / "stat.json"
    assert main(["solve-stat", "--alpha", "1", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["K"] == 6 and len(data["physical_powers"]) == 6
    assert sum(data["throughputs"]) == pytest.approx(data["sum_throughput"], rel=1e-8)
    assert main(["solve-stat", "--scheme", "tdma-opt", "--out", str(out)]) == 0
    assert len(json.loads(out.read_text())["slot_powers"]) == 6


def test_solve_perfect_with_gains(capsys):
    assert main(["solve-perfect", "--k", "3", "--gains", "2.0,0.1,0.7",
                 "--alpha", "2"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["gains_sorted"] == [0.1, 0.7, 2.0]
    assert data["user_of_rank"] == [1, 2, 0]
    assert sum(data["powers"]) == pytest.approx(100.0, rel=1e-8)
    assert main(["solve-perfect", "--k", "3", "--gains", "1,2"]) == 2


def test_simulate_and_experiment_csv(tmp_path):
    out = tmp_path / "sim.csv"
    assert main(["simulate", "--k", "3", "--blocks", "20", "--out", str(out)]) == 0
    rows = read_rows(out)
    assert {r.scheme for r in rows} == {"noma-opt", "noma-fixed", "tdma-opt"}
    assert all(r.blocks == 20 for r in rows)
    assert main(["experiment", "--regime", "statistical", "--sweep", "snr_db=10,20",
                 "--out", str(out), "--format", "json-lines"]) == 0
    assert len(read_rows(out, "json-lines")) == 6


def test_search_alpha_command(capsys):
    assert main(["search-alpha", "--fir", "0.9"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["fairness_index"] >= 0.9 - 1e-9
    assert main(["search-alpha"]) == 2
    assert main(["search-alpha", "--fir", "0.9", "--scheme", "noma-fixed"]) == 2


def test_unreachable_requirement_exits_3(capsys):
    assert main(["search-alpha", "--fir", "0.9999999"]) == 3
    assert "solver error" in capsys.readouterr().err


def test_unwritable_output_exits_4(tmp_path):
    out = tmp_path / "missing" / "dir" / "x.json"
    assert main(["solve-stat", "--out", str(out)]) == 4


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "alphanoma", "solve-stat", "--k", "2"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["K"] == 2
