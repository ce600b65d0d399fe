import copy
import csv
import json
from pathlib import Path

import pytest
import yaml

from triobs import cli
from triobs.cli import (EXIT_INTEGRATION, EXIT_OK, EXIT_SYNTHESIS, EXIT_VALIDATION, EXIT_VERIFICATION,
                        ScenarioError, builtin_scenario, load_scenario, main, scenario_from_dict)
from triobs.ode import IntegrationError
from triobs.synthesis import GainSchedule

SMALL = {
    "name": "small",
    "system": {"n": 2, "m": [1], "f": ["-x1", "-x2"], "a": ["1"], "beta": "2*s"},
    "horizon": 14,
    "odp": {"R": 0.5, "x0": [0.3, -0.2]},
}


@pytest.fixture
def small(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(yaml.safe_dump(SMALL))
    return p


def _write(tmp_path, data, name="s.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


def test_builtin_example_loads():
    sc = builtin_scenario("example11")
    assert sc.n == 3 and sc.m == [3, 3]
    assert sc.a == ["1", "1/(1+x1^2)"] and sc.f == ["-x1", "-x2", "-x3"]
    assert (sc.mode, sc.R, sc.L, sc.c1, sc.c2, sc.horizon) == ("odp", 1.0, 2.0, 1.0, 3.0, 20.0)


def test_demo_alias_and_builtin_name_resolve():
    assert load_scenario("chain2-sodp").name == "chain2"
    assert load_scenario("chain2").x0 == [0.9, -1.2]


def test_missing_horizon_defaults():
    data = copy.deepcopy(SMALL)
    del data["horizon"]
    assert scenario_from_dict(data).horizon == 20.0


def test_even_power_rejected_with_key_path():
    data = copy.deepcopy(SMALL)
    data["system"]["m"] = [2]
    with pytest.raises(ScenarioError, match="system/m"):
        scenario_from_dict(data)


def test_unknown_key_rejected():
    with pytest.raises(ScenarioError):
        scenario_from_dict({**SMALL, "colour": "red"})


def test_dimension_mismatch_rejected():
    data = copy.deepcopy(SMALL)
    data["system"]["f"] = ["-x1"]
    with pytest.raises(ScenarioError, match="drift"):
        scenario_from_dict(data)


def test_start_outside_ball_rejected():
    data = copy.deepcopy(SMALL)
    data["odp"]["x0"] = [1.0, 0.0]
    with pytest.raises(ScenarioError, match="exceeds"):
        scenario_from_dict(data)


def test_switching_mode_requires_state():
    data = copy.deepcopy(SMALL)
    del data["odp"]
    data["mode"] = "sodp"
    with pytest.raises(ScenarioError):
        scenario_from_dict(data)


def test_unknown_grid_key_rejected():
    with pytest.raises(ScenarioError, match="grids"):
        scenario_from_dict({**SMALL, "grids": {"nonsense": 1}})


def test_random_starts_are_seeded_and_inside_ball():
    data = copy.deepcopy(SMALL)
    del data["odp"]["x0"]
    data["odp"]["trials"] = 5
    sc = scenario_from_dict(data)
    a, b = sc.initial_states(), sc.initial_states()
    assert (a == b).all() and a.shape == (5, 2)
    assert ((a ** 2).sum(axis=1) <= 0.25).all()
    assert not (sc.with_overrides(seed=1).initial_states() == a).all()


def test_even_power_exit_code(tmp_path):
    data = copy.deepcopy(SMALL)
    data["system"]["m"] = [2]
    assert main(["synth", "--scenario", str(_write(tmp_path, data)), "--out-dir", str(tmp_path), "-q"]) \
        == EXIT_VALIDATION


def test_missing_file_exit_code(tmp_path):
    assert main(["synth", "--scenario", str(tmp_path / "none.yaml"), "--out-dir", str(tmp_path), "-q"]) \
        == EXIT_VALIDATION


def test_bad_expression_exit_code(tmp_path):
    data = copy.deepcopy(SMALL)
    data["system"]["f"] = ["-x1", "-x2 +"]
    assert main(["synth", "--scenario", str(_write(tmp_path, data)), "--out-dir", str(tmp_path), "-q"]) \
        == EXIT_VALIDATION


def test_wrong_bound_exit_code(tmp_path):
    data = copy.deepcopy(SMALL)
    data["system"]["f"] = ["0", "0"]
    data["system"]["m"] = [3]
    data["system"]["beta"] = "s"
    assert main(["synth", "--scenario", str(_write(tmp_path, data)), "--out-dir", str(tmp_path), "-q"]) \
        == EXIT_VALIDATION


def test_synthesis_failure_exit_code(tmp_path):
    data = copy.deepcopy(SMALL)
    data["constants"] = {"c1": 50}
    assert main(["synth", "--scenario", str(_write(tmp_path, data)), "--out-dir", str(tmp_path), "-q"]) \
        == EXIT_SYNTHESIS


def test_integration_failure_exit_code(tmp_path, small, monkeypatch):
    def boom(*args, **kwargs):
        raise IntegrationError("state became non-finite at t=1")

    monkeypatch.setattr(cli, "simulate", boom)
    assert main(["run", "--scenario", str(small), "--out-dir", str(tmp_path), "-q"]) == EXIT_INTEGRATION


def test_synth_is_byte_identical(tmp_path, small):
    for d in ("a", "b"):
        assert main(["synth", "--scenario", str(small), "--out-dir", str(tmp_path / d), "-q"]) == EXIT_OK
    assert (tmp_path / "a" / "schedule.json").read_bytes() == (tmp_path / "b" / "schedule.json").read_bytes()


def test_synth_run_verify_pipeline(tmp_path, small):
    out = tmp_path / "out"
    assert main(["synth", "--scenario", str(small), "--out-dir", str(out), "-q"]) == EXIT_OK
    assert main(["run", "--scenario", str(small), "--out-dir", str(out), "--schedule",
                 str(out / "schedule.json"), "-q"]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["passed"] and report["runs"][0]["trace"] == "trace.csv"
    with open(out / "trace.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ["t", "x1", "x2", "z1", "z2", "e1", "e2", "y", "V", "envelope", "g"]
    assert main(["verify", "--out-dir", str(out), "--samples", "2000", "-q"]) == EXIT_OK
    checks = json.loads((out / "checks.json").read_text())
    assert checks["passed"] and all(c["passed"] for c in checks["checks"])


def test_verify_corrupted_schedule_exit_code(tmp_path, small):
    out = tmp_path / "out"
    assert main(["synth", "--scenario", str(small), "--out-dir", str(out), "-q"]) == EXIT_OK
    s = GainSchedule.loads((out / "schedule.json").read_text())
    s.final.pR = s.final.pR * 1.5
    bad = tmp_path / "bad.json"
    bad.write_text(s.dumps())
    assert main(["verify", "--schedule", str(bad), "--out-dir", str(tmp_path / "v"), "--samples", "2000", "-q"]) \
        == EXIT_VERIFICATION
    checks = json.loads((tmp_path / "v" / "checks.json").read_text())
    failed = [c for c in checks["checks"] if not c["passed"]]
    assert failed and all(c["witness"] for c in failed)


def test_verify_empty_directory_exit_code(tmp_path):
    assert main(["verify", "--out-dir", str(tmp_path), "-q"]) == EXIT_VALIDATION


def test_batch_over_seeds(tmp_path):
    data = copy.deepcopy(SMALL)
    del data["odp"]["x0"]
    p = _write(tmp_path, data)
    out = tmp_path / "batch"
    assert main(["batch", "--scenario", str(p), "--seeds", "1", "2", "--jobs", "2", "--out-dir", str(out),
                 "-q"]) == EXIT_OK
    doc = json.loads((out / "batch.json").read_text())
    assert [j["exit"] for j in doc["jobs"]] == [0, 0]
    t1 = (out / "small-seed1" / "trace.csv").read_text()
    t2 = (out / "small-seed2" / "trace.csv").read_text()
    assert t1 != t2


def test_batch_reports_worst_exit(tmp_path, small):
    data = copy.deepcopy(SMALL)
    data["constants"] = {"c1": 50}
    bad = _write(tmp_path, data, "bad.yaml")
    code = main(["batch", "--scenario", str(small), "--scenario", str(bad), "--jobs", "1",
                 "--out-dir", str(tmp_path / "b"), "-q"])
    assert code == EXIT_SYNTHESIS


@pytest.mark.parametrize("name", ["example11-odp", "chain2-sodp"])
def test_demo_passes_and_writes_artifacts(demo_dirs, name):
    code, out = demo_dirs[name]
    assert code == EXIT_OK
    checks = json.loads((Path(out) / "checks.json").read_text())
    assert checks["passed"]
    report = json.loads((Path(out) / "report.json").read_text())
    assert report["passed"]
    if name == "chain2-sodp":
        assert (Path(out) / "plan.json").is_file() and list(Path(out).glob("seg-*.csv"))
    else:
        assert (Path(out) / "schedule.json").is_file()


@pytest.mark.parametrize("name", ["example11-odp", "chain2-sodp"])
def test_verify_rerun_on_demo_artifacts(demo_dirs, name, tmp_path):
    _, out = demo_dirs[name]
    args = ["verify", "--report", str(Path(out) / "report.json"), "--out-dir", str(tmp_path), "-q"]
    assert main(args) == EXIT_OK
