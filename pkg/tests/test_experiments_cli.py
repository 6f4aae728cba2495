import json

import pytest

from trapmodel.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main
from trapmodel.errors import ParameterError, UnsupportedDimensionError
from trapmodel.experiments import REGISTRY, ExperimentConfig, bundled_config, run


def write(tmp_path, obj, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


def test_list_names_every_experiment(capsys):
    assert main(["list"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in REGISTRY:
        assert f"{name}:" in out


def test_every_experiment_has_a_valid_bundled_config():
    for name in REGISTRY:
        raw = bundled_config(name)
        assert raw["experiment"] == name
        ExperimentConfig(**raw).resolved()


@pytest.mark.parametrize("argv", [
    [], ["run"], ["frobnicate"], ["run", "no-such-experiment"],
    ["run", "fd-limit", "--threads", "0"], ["run", "fd-limit", "--seed", "abc"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE


@pytest.mark.parametrize("cfg", [
    {"experiment": "aging", "params": {"alpha": 1.5}},
    {"experiment": "aging", "params": {"d": 2}},
    {"experiment": "aging", "params": {"colour": "red"}},
    {"experiment": "aging", "params": {}, "extra": 1},
    {"experiment": "coarse-lemma24", "params": {"epsilon": 5.0}},
    {"experiment": "env-tail", "params": {"sites": 0}},
    {"experiment": "fd-limit", "params": {}},  # mismatched experiment name on the command line
])
def test_config_usage_errors(tmp_path, cfg, capsys):
    path = write(tmp_path, cfg)
    assert main(["run", "aging", "--config", path, "--out", str(tmp_path)]) == EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


def test_missing_and_malformed_config(tmp_path):
    assert main(["run", "aging", "--config", str(tmp_path / "absent.json")]) == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "aging", "--config", str(bad)]) == EXIT_USAGE


def test_resolved_rejects_bad_values():
    with pytest.raises(ParameterError):
        ExperimentConfig("nope", {}).resolved()
    with pytest.raises(UnsupportedDimensionError):
        ExperimentConfig("walk-basics", {"d": 1}).resolved()
    p = ExperimentConfig("fd-limit", {"rel_tol": 0.5}).resolved()
    assert p["rel_tol"] == 0.5 and p["dims"] == [2, 3]


def test_from_file_overrides(tmp_path):
    path = write(tmp_path, {"experiment": "green-free", "params": {}, "master_seed": 3})
    cfg = ExperimentConfig.from_file(path, master_seed=9, out="x")
    assert cfg.master_seed == 9 and cfg.out == "x"
    cfg = ExperimentConfig.from_file(path, master_seed=None)
    assert cfg.master_seed == 3


def test_small_run_report_structure(tmp_path, capsys):
    path = write(tmp_path, {"experiment": "subordinator-laplace",
                            "params": {"draws": 20000, "alphas": [0.5], "lambdas": [1.0]}, "master_seed": 5})
    code = main(["run", "subordinator-laplace", "--config", path, "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code in (EXIT_OK, EXIT_FAIL)
    assert out.count("[PASS]") + out.count("[FAIL]") == 2
    rep = json.loads((tmp_path / "subordinator-laplace" / "report.json").read_text())
    assert set(rep) >= {"config", "rows", "checks", "passed", "wall_clock", "seed_provenance", "constants", "files"}
    assert rep["config"]["master_seed"] == 5 and rep["config"]["params"]["draws"] == 20000
    assert (code == EXIT_OK) == rep["passed"]
    for f in rep["files"]:
        assert (tmp_path / "subordinator-laplace" / f).exists()


def test_run_writes_constants(tmp_path):
    rep = run(ExperimentConfig("green-free", {}, out=str(tmp_path)))
    assert rep.passed
    assert any(f.endswith(".csv") for f in rep.files)


def test_failing_tolerance_exits_one(tmp_path):
    path = write(tmp_path, {"experiment": "fd-limit", "params": {"rel_tol": 1e-9, "dims": [3], "alphas": [0.5]}})
    assert main(["run", "fd-limit", "--config", path, "--out", str(tmp_path)]) == EXIT_FAIL
