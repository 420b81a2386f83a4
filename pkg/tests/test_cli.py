import json

import pytest

from cli import main
from errors import EXIT_GATE_FAILED, EXIT_MATH, EXIT_OK, EXIT_USAGE
from models import GateResult, ProbeReport, ProbeRow, ValidateReport, ValidateRow
from problems import BUILTIN_PROBLEMS, dump_problem, parse_problem


def records(series_document):
    return {tuple(term[:-2]): (term[-2], term[-1]) for term in series_document["terms"]}


# --------- normalize ---------

def test_normalize_writes_the_first_order_normal_form(tmp_path):
    out = tmp_path / "landau_m1.json"
    assert main(["normalize", "landau", "--order", "1", "--out", str(out)]) == EXIT_OK
    document = json.loads(out.read_text(encoding="utf-8"))
    assert document["problem"] == "landau"
    assert document["steps_taken"] == 1
    h_final = records(document["h_final"])
    # eps I and eps y1^2 / 2
    assert h_final[(1, 1, 0, 0, 1)] == pytest.approx((0.0, 1.0), abs=1e-12)
    assert h_final[(0, 0, 2, 0, 1)] == pytest.approx((0.5, 0.0), abs=1e-12)
    assert len(document["generators"]) == 1


def test_normalize_prints_without_out(capsys):
    assert main(["normalize", "averaged", "-m", "1"]) == EXIT_OK
    document = json.loads(capsys.readouterr().out)
    assert document["remainder"]["terms"] == []


def test_normalize_from_a_problem_file(tmp_path):
    path = tmp_path / "landau.json"
    path.write_text(dump_problem(BUILTIN_PROBLEMS["landau"]), encoding="utf-8")
    assert main(["normalize", str(path), "--order", "2"]) == EXIT_OK


def test_malformed_problem_file(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{", encoding="utf-8")
    assert main(["normalize", str(path)]) == EXIT_USAGE
    assert "ProblemParseError" in capsys.readouterr().err


def test_degenerate_problem_is_a_math_error(tmp_path, degenerate_problem_json, capsys):
    path = tmp_path / "flat.json"
    path.write_text(degenerate_problem_json, encoding="utf-8")
    assert main(["normalize", str(path)]) == EXIT_MATH
    assert "DegenerateFrequencyError" in capsys.readouterr().err


def test_order_beyond_the_truncation():
    assert main(["normalize", "landau", "--order", "9"]) == EXIT_USAGE


# --------- validate ---------

def test_empty_eps_list_is_a_usage_error():
    assert main(["validate", "landau", "--eps", ""]) == EXIT_USAGE
    assert main(["validate", "landau", "--eps", "0.01,abc"]) == EXIT_USAGE
    assert main(["validate", "landau", "--eps", "0.01,-0.02"]) == EXIT_USAGE


def test_failed_gate_exits_with_one(mocker, tmp_path):
    report = ValidateReport(
        problem="landau",
        order=1,
        seed=7,
        horizon_factor=1.0,
        rows=[ValidateRow(eps=0.01, drift=2e-4, symplecticity_defect=1e-12, roundtrip_error=1e-15)],
        gates=[GateResult(name="drift_scaling", passed=False, detail="slope 0.1, needs >= 0.7")],
        passed=False,
    )
    run = mocker.patch("cli.run_validate", return_value=report)
    out = tmp_path / "report.csv"
    code = main(["validate", "landau", "--eps", "0.02,0.01", "--seed", "7", "--out", str(out)])
    assert code == EXIT_GATE_FAILED
    assert run.call_args.args[1:] == (1, [0.02, 0.01], 7, None, None)
    assert out.read_text(encoding="utf-8") == (
        "eps,drift,slope_estimate,symplecticity_defect,roundtrip_error\n0.01,0.0002,,1e-12,1e-15\n"
    )
    assert json.loads((tmp_path / "report.csv.json").read_text(encoding="utf-8"))["seed"] == 7


def test_passing_report_exits_with_zero(mocker, capsys):
    report = ValidateReport(problem="landau", order=1, seed=1, horizon_factor=1.0, passed=True)
    mocker.patch("cli.run_validate", return_value=report)
    assert main(["validate", "landau"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("eps,drift,")


def test_too_large_eps_fails_the_admissibility_gate(capsys):
    assert main(["validate", "landau", "--order", "1", "--eps", "0.5"]) == EXIT_GATE_FAILED
    assert "eps_admissible" in capsys.readouterr().err


def test_validate_rejects_an_empty_eps_list_in_the_problem_file(tmp_path, capsys):
    document = json.loads(dump_problem(BUILTIN_PROBLEMS["landau"]))
    document["experiments"] = {"eps_list": []}
    path = tmp_path / "landau.json"
    path.write_text(json.dumps(document), encoding="utf-8")
    assert main(["validate", str(path)]) == EXIT_USAGE
    assert "ProblemParseError" in capsys.readouterr().err


# --------- probe ---------

def test_probe_writes_its_table(mocker, tmp_path):
    report = ProbeReport(
        problem="landau",
        m_max=2,
        seed=1,
        rows=[ProbeRow(eps=0.02, best_m=1, min_drift=3e-5), ProbeRow(eps=0.01, best_m=2, min_drift=1e-6)],
    )
    mocker.patch("cli.run_probe", return_value=report)
    out = tmp_path / "probe.csv"
    assert main(["probe", "landau", "-m", "2", "--out", str(out)]) == EXIT_OK
    assert out.read_text(encoding="utf-8") == "eps,best_m,min_drift\n0.02,1,3e-05\n0.01,2,1e-06\n"
    assert (tmp_path / "probe.csv.json").exists()


# --------- examples ---------

def test_examples_list(capsys):
    assert main(["examples", "list"]) == EXIT_OK
    names = [line.split("\t")[0] for line in capsys.readouterr().out.splitlines()]
    assert names == ["averaged", "landau", "landau_quartic"]


def test_unknown_example():
    assert main(["examples", "show", "nope"]) == EXIT_USAGE


def test_unknown_command():
    assert main(["transmogrify"]) == EXIT_USAGE


def test_examples_show(capsys):
    assert main(["examples", "show", "landau"]) == EXIT_OK
    assert parse_problem(capsys.readouterr().out) == BUILTIN_PROBLEMS["landau"]


# --------- trajectory ---------

TRAJECTORY_ARGS = ["trajectory", "landau", "--eps", "0.01", "--x0", "1,0,0.3,-0.2", "--t-final", "1", "--dt", "0.01"]


def test_trajectory_writes_csv_and_sidecar(tmp_path, capsys):
    out = tmp_path / "flow.csv"
    assert main([*TRAJECTORY_ARGS, "--samples", "11", "--out", str(out)]) == EXIT_OK
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "t,q,p,y1_1,y2_1,energy,J"
    assert len(lines) == 12
    first = [float(cell) for cell in lines[1].split(",")]
    assert first[:5] == pytest.approx([0.0, 1.0, 0.0, 0.3, -0.2])
    document = json.loads((tmp_path / "flow.csv.json").read_text(encoding="utf-8"))
    assert len(document["times"]) == 11
    assert document["state_names"] == ["q", "p", "y1_1", "y2_1"]
    assert document["energy_error"] < 1e-6
    assert "energy error" in capsys.readouterr().err


def test_trajectory_prints_without_out(capsys):
    assert main([*TRAJECTORY_ARGS, "--order", "0", "--samples", "3"]) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[0].startswith("t,q,p,")


def test_trajectory_with_a_wrong_state_length(capsys):
    assert main(["trajectory", "landau", "--eps", "0.01", "--x0", "1,0,0.3"]) == EXIT_USAGE
    assert "DimensionMismatchError" in capsys.readouterr().err


def test_trajectory_step_beyond_the_horizon(capsys):
    args = ["trajectory", "landau", "--eps", "0.01", "--x0", "1,0,0.3,-0.2", "--t-final", "0.1", "--dt", "0.5"]
    assert main(args) == EXIT_USAGE
    assert "dt must be smaller than t_final" in capsys.readouterr().err
