import csv
import json

import pytest

from hypertwin import cli
from hypertwin.params import ParameterSet
from hypertwin.presets import healthy
from hypertwin.scenarios import ScenarioSpec, builtin


def run(tmp_path, *argv):
    return cli.main(["--out", str(tmp_path), *argv])


def manifest(path):
    return json.loads((path / "manifest.json").read_text())


def test_simulate_nc_writes_report_and_manifest(tmp_path):
    assert run(tmp_path, "--run", "a", "simulate", "--variant", "NC") == cli.EXIT_OK
    d = tmp_path / "a"
    doc = json.loads((d / "report.json").read_text())
    assert len(doc["outputs"]) == 45
    assert set(doc["verdicts"]) <= set(doc["outputs"])
    assert doc["all_in_range"] is True
    entry = manifest(d)[-1]
    assert entry["command"] == "simulate" and entry["exit_code"] == 0
    assert sorted(entry["outputs"]) == sorted(p.name for p in d.iterdir() if p.name != "manifest.json")
    assert ParameterSet.load(d / "params.toml") == healthy("NC")


def test_simulate_c_from_parameter_file(tmp_path):
    healthy("C").save(tmp_path / "healthy_c.toml")
    assert run(tmp_path, "--run", "c", "simulate", "--variant", "C",
               "--params", str(tmp_path / "healthy_c.toml")) == 0
    doc = json.loads((tmp_path / "c" / "report.json").read_text())
    assert len(doc["outputs"]) == 46
    assert manifest(tmp_path / "c")[-1]["inputs"] == [str(tmp_path / "healthy_c.toml")]


def test_options_after_the_verb(tmp_path):
    assert cli.main(["simulate", "--variant", "NC", "--out", str(tmp_path), "--run", "x", "--bsa", "2.0"]) == 0
    doc = json.loads((tmp_path / "x" / "report.json").read_text())
    assert doc["bsa"] == 2.0


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "envroot"))
    assert cli.main(["--run", "e", "simulate", "--variant", "NC"]) == 0
    assert (tmp_path / "envroot" / "e" / "trace.csv").is_file()


def test_usage_errors_exit_with_usage_code(tmp_path, capsys):
    assert run(tmp_path, "simulate", "--params", str(tmp_path / "missing.toml")) == cli.EXIT_USAGE
    assert run(tmp_path, "scenario", "diastolic", "mild") == cli.EXIT_USAGE
    assert run(tmp_path, "frobnicate") == cli.EXIT_USAGE
    healthy("NC").save(tmp_path / "nc.toml")
    assert run(tmp_path, "simulate", "--variant", "C", "--params", str(tmp_path / "nc.toml")) == cli.EXIT_USAGE
    assert "missing.toml" in capsys.readouterr().err


def test_divergence_has_its_own_exit_code(tmp_path, monkeypatch):
    from hypertwin.engine import SimulationDivergence

    def boom(*a, **k):
        raise SimulationDivergence("V_LV", 0.5)

    monkeypatch.setattr(cli, "simulate", boom)
    assert run(tmp_path, "--run", "d", "simulate") == cli.EXIT_DIVERGENCE
    assert manifest(tmp_path / "d")[-1]["exit_code"] == cli.EXIT_DIVERGENCE
    assert len({cli.EXIT_USAGE, cli.EXIT_DIVERGENCE, cli.EXIT_UNSUCCESSFUL, cli.EXIT_OK}) == 4


def test_manifest_is_append_only(tmp_path):
    run(tmp_path, "--run", "m", "simulate", "--variant", "NC")
    first = manifest(tmp_path / "m")
    run(tmp_path, "--run", "m", "simulate", "--variant", "NC", "--hr", "70")
    second = manifest(tmp_path / "m")
    assert len(second) == 2 and second[0] == first[0]


def test_reruns_are_byte_identical(tmp_path):
    for name in ("r1", "r2"):
        assert run(tmp_path, "--run", name, "scenario", "pulmonary", "mild") == 0
    for f in ("trace.csv", "report.json", "params.toml", "scenario.toml", "baseline_report.json"):
        assert (tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes()


def test_scenario_documents_round_trip(tmp_path):
    assert run(tmp_path, "--run", "s", "scenario", "systemic", "severe") == 0
    d = tmp_path / "s"
    assert ScenarioSpec.load(d / "scenario.toml") == builtin("Systemic", "Severe")
    doc = json.loads((d / "report.json").read_text())
    assert doc["outputs"]["SAP_max"] > json.loads((d / "baseline_report.json").read_text())["outputs"]["SAP_max"]


def test_report_verb_renders_figures(tmp_path):
    run(tmp_path, "--run", "s", "scenario", "renovascular", "moderate")
    assert run(tmp_path, "--run", "rep", "report", str(tmp_path / "s")) == 0
    d = tmp_path / "rep"
    assert (d / "pv_loops.svg").stat().st_size > 0
    assert (d / "time_series.svg").stat().st_size > 0
    rows = list(csv.DictReader((d / "summary.csv").open()))
    assert {r["run"] for r in rows} == {"run", "baseline"}
    assert run(tmp_path, "report", str(tmp_path / "nothing")) == cli.EXIT_USAGE


def test_plots_flag(tmp_path):
    assert run(tmp_path, "--run", "p", "--plots", "simulate", "--variant", "NC") == 0
    assert (tmp_path / "p" / "pv_loops.svg").is_file()
    assert "pv_loops.svg" in manifest(tmp_path / "p")[-1]["outputs"]


def test_sobol_indices_table_has_one_row_per_parameter(tmp_path):
    assert run(tmp_path, "--run", "so", "sobol", "--variant", "NC", "--n", "2") == 0
    rows = (tmp_path / "so" / "indices.csv").read_text().splitlines()
    assert len(rows) == 1 + 26
    assert len(rows[0].split(",")) == 1 + 45
    design = (tmp_path / "so" / "design.csv").read_text().splitlines()
    assert len(design) == 1 + 2 * 2 * 27


def test_groups_table(tmp_path):
    assert run(tmp_path, "--run", "g", "groups", "--variant", "NC") == 0
    rows = (tmp_path / "g" / "indicators.csv").read_text().splitlines()
    assert len(rows) == 1 + 50 * 129


def test_unsuccessful_calibration_exit_code(tmp_path):
    (tmp_path / "t.json").write_text(json.dumps({"names": ["SAP_max"], "values": [1000.0]}))
    code = run(tmp_path, "--run", "cal", "calibrate", "--targets", str(tmp_path / "t.json"),
               "--free", "circ.SYS.AR.R", "--max-iter", "2")
    assert code == cli.EXIT_UNSUCCESSFUL
    res = json.loads((tmp_path / "cal" / "result.json").read_text())
    assert res["success"] is False


def test_calibrate_from_problem_document(tmp_path):
    from hypertwin import calibration as cal
    p = healthy("NC")
    targets = cal.TargetData.from_report(cal.report_for(p))
    prob = cal.CalibrationProblem(("circ.SYS.AR.R",), p.scaled({"circ.SYS.AR.R": 1.1}), targets)
    (tmp_path / "prob.json").write_text(prob.to_json())
    assert run(tmp_path, "--run", "cp", "calibrate", "--problem", str(tmp_path / "prob.json")) == 0
    back = cal.CalibrationProblem.from_json((tmp_path / "cp" / "problem.json").read_text())
    assert back.to_json() == prob.to_json()


def test_workflow_keeps_left_ventricle(tmp_path):
    code = run(tmp_path, "--run", "w", "workflow", "pulmonary", "severe", "--max-iter", "1")
    assert code in (cli.EXIT_OK, cli.EXIT_UNSUCCESSFUL)
    d = tmp_path / "w"
    fitted = ParameterSet.load(d / "params.toml")
    base = healthy("NC")
    for f in ("Ea", "Ep", "V0", "TC", "TR", "tC"):
        assert fitted.get(f"chambers.LV.{f}") == base.get(f"chambers.LV.{f}")
    assert "names" in json.loads((d / "targets.json").read_text())


def test_match_verb(tmp_path):
    code = run(tmp_path, "--run", "mt", "match", "--tune", "capillary.R_SH", "--n", "1", "--rounds", "1")
    assert code in (cli.EXIT_OK, cli.EXIT_UNSUCCESSFUL)
    lines = (tmp_path / "mt" / "trajectory.csv").read_text().splitlines()
    assert lines[0].startswith("iteration,parameter,factor,error,accepted")
    assert ParameterSet.load(tmp_path / "mt" / "params.toml").variant == "C"


def test_lossstudy_small(tmp_path):
    code = run(tmp_path, "--run", "ls", "lossstudy", "--cases", "systemic:mild", "--losses", "0-1",
               "--free", "circ.SYS.AR.R,chambers.RV.Ea", "--max-iter", "2")
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "ls" / "study.csv").open()))
    assert len(rows) == 2 and {r["loss_id"] for r in rows} == {"0", "1"}


@pytest.mark.parametrize("verb", ["simulate", "scenario", "sobol", "groups", "calibrate", "lossstudy",
                                  "match", "workflow", "report"])
def test_every_verb_has_help(verb, capsys):
    assert cli.main([verb, "--help"]) == 0
    assert "usage" in capsys.readouterr().out
