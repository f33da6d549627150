import json
import subprocess
import sys

import pytest

from conftest import needs_solver
from hmmpriv.cli import main


@pytest.fixture
def geo(tmp_path):
    path = tmp_path / "geo.json"
    assert main(["build-model", "--mechanism", "geometric", "-o", str(path)]) == 0
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_dp_check_on_geometric_holds(capsys, geo):
    code, out, _ = run(capsys, "verify", "--model", geo, "--pairs", "dp", "--c", "2", "--kmax", "1")
    assert code == 0
    assert json.loads(out)["verdict"] == "holds"


def test_pufferfish_pair_violates(capsys, geo):
    code, out, _ = run(capsys, "verify", "--model", geo, "--pi", "1,0,0", "--tau", "0,0,1", "--c", "2")
    assert code == 1
    cex = json.loads(out)["counterexample"]
    assert cex["sequence_unicode"][0] in ("0̃", "2̃")


def test_unknown_flag_is_usage_error(capsys):
    code, _, err = run(capsys, "verify", "--bogus")
    assert code == 2
    assert json.loads(err)["error"] == "usage"


@pytest.mark.parametrize(
    "argv",
    [
        ["verify", "--model", "missing.json", "--pairs", "dp", "--c", "2"],
        ["verify", "--model", "{geo}", "--pairs", "dp"],
        ["verify", "--model", "{geo}", "--pairs", "dp", "--c", "2", "--eps", "1"],
        ["verify", "--model", "{geo}", "--pi", "1,0,0", "--c", "2"],
        ["verify", "--model", "{geo}", "--pi", "1,1,0", "--tau", "0,0,1", "--c", "2"],
        ["verify", "--model", "{geo}", "--pairs", "dp", "--c", "1/2"],
        ["verify", "--model", "{geo}", "--pairs", "dp", "--c", "2", "--jobs", "0"],
        ["run", "--mechanism", "naive-noisy-max", "--input", "0,5,1"],
        ["run", "--mechanism", "above-threshold", "--input", "1,2"],
    ],
)
def test_bad_inputs_exit_two(capsys, geo, argv):
    code, _, err = run(capsys, *[a.replace("{geo}", str(geo)) for a in argv])
    assert code == 2
    assert set(json.loads(err)) == {"error", "message"}


def test_malformed_model_file(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code, _, err = run(capsys, "verify", "--model", bad, "--pairs", "dp", "--c", "2")
    assert code == 2 and "not valid JSON" in json.loads(err)["message"]


def test_certify_reproduces_a_report(capsys, geo, tmp_path):
    report = tmp_path / "report.json"
    code, _, _ = run(capsys, "verify", "--model", geo, "--pi", "1,0,0", "--tau", "0,0,1", "--c", "2", "-o", report)
    assert code == 1
    code, out, _ = run(capsys, "certify", "--report", report)
    cert = json.loads(out)
    assert code == 1 and cert["valid"]
    saved = json.loads(report.read_text())["counterexample"]
    assert (cert["p_pi"], cert["p_tau"]) == (saved["p_pi"], saved["p_tau"])


def test_certify_single_sequence(capsys, geo):
    code, out, _ = run(capsys, "certify", "--model", geo, "--pi", "state:0", "--tau", "state:2", "--seq", "~0", "--c", "4")
    assert code == 0
    got = json.loads(out)
    assert not got["valid"] and got["p_pi"] == "2/3" and got["p_tau"] == "1/6"


def test_certify_needs_inputs(capsys):
    assert run(capsys, "certify")[0] == 2


def test_reports_identical_apart_from_elapsed_time(capsys, geo, tmp_path):
    texts = []
    for name in ("a.json", "b.json"):
        path = tmp_path / name
        run(capsys, "dp-check", "--model", geo, "--eps", "0.5", "--kmax", "2", "-o", path)
        texts.append(json.loads(path.read_text()))
    for t in texts:
        t.pop("elapsed_ms")
    assert texts[0] == texts[1]


def test_dp_check_infers_noisy_max_adjacency(capsys, tmp_path):
    model = tmp_path / "nm.json"
    run(capsys, "build-model", "--mechanism", "improved-noisy-max", "--queries", "2", "-o", model)
    code, out, _ = run(capsys, "dp-check", "--model", model, "--c", "2", "--kmax", "2", "--first-only")
    assert code in (0, 1)
    assert json.loads(out)["verdict"] in ("holds", "violation")


def test_eps_rounds_the_bound_up(capsys, geo):
    # ln 2 - 0.01 gives c just below 2, so the ratio-2 pair violates
    code, _, _ = run(capsys, "dp-check", "--model", geo, "--eps", "0.683", "--kmax", "1")
    assert code == 1
    code, _, _ = run(capsys, "dp-check", "--model", geo, "--eps", "0.71", "--kmax", "1")
    assert code == 0


def test_build_model_with_scenario(capsys, tmp_path):
    model, sc = tmp_path / "m.json", tmp_path / "s.json"
    code, _, _ = run(
        capsys, "build-model", "--mechanism", "geometric", "-o", model,
        "--scenario-name", "contagious-pair", "--scenario-out", sc,
    )
    assert code == 0
    code, out, _ = run(capsys, "verify", "--model", model, "--scenario", sc, "--c", "2")
    assert code == 1


@needs_solver
def test_parametric_scenario_through_smt(capsys, tmp_path):
    model, sc = tmp_path / "m.json", tmp_path / "s.json"
    run(capsys, "build-model", "--mechanism", "geometric", "-o", model, "--scenario-name", "independent", "--scenario-out", sc)
    code, out, _ = run(capsys, "verify", "--model", model, "--scenario", sc, "--c", "2")
    assert code == 0 and json.loads(out)["backend"] == "smt"


def test_missing_solver_exits_three(capsys, tmp_path):
    model, sc = tmp_path / "m.json", tmp_path / "s.json"
    run(capsys, "build-model", "--mechanism", "geometric", "-o", model, "--scenario-name", "independent", "--scenario-out", sc)
    code, _, _ = run(capsys, "verify", "--model", model, "--scenario", sc, "--c", "2", "--solver-cmd", "no-such-solver")
    assert code == 3


def test_sat_reduce(capsys, tmp_path):
    cnf, model = tmp_path / "f.cnf", tmp_path / "h.json"
    cnf.write_text("p cnf 3 2\n1 -2 0\n2 3 0\n")
    code, out, _ = run(capsys, "sat-reduce", cnf, "--model-out", model)
    rep = json.loads(out)
    assert code == 0 and rep["gap_zero"] and rep["satisfiable_truth_table"]
    assert len(json.loads(model.read_text())["states"]) == 12 * 3 * 2 + 4 * 2
    cnf.write_text("p cnf 3 2\n1 0\n-1 0\n")
    rep = json.loads(run(capsys, "sat-reduce", cnf)[1])
    assert not rep["gap_zero"] and not rep["satisfiable_truth_table"]
    cnf.write_text("p cnf 2 1\n1 2 0\n")
    assert run(capsys, "sat-reduce", cnf)[0] == 2


def test_run_emits_jsonl(capsys):
    code, out, _ = run(capsys, "run", "--mechanism", "above-threshold", "--input", "2:1,1,2", "--runs", "5", "--seed", "3")
    records = [json.loads(line) for line in out.splitlines()]
    assert code == 0 and [r["seed"] for r in records] == [3, 4, 5, 6, 7]
    assert records[0]["input"] == {"threshold": 2, "queries": [1, 1, 2]}
    again = run(capsys, "run", "--mechanism", "above-threshold", "--input", "2:1,1,2", "--runs", "5", "--seed", "3")[1]
    assert again == out


def test_test_command_with_csv(capsys, tmp_path):
    csv = tmp_path / "curve.csv"
    code, out, _ = run(
        capsys, "test", "--mechanism", "naive-noisy-max", "--d1", "1,1,1", "--d2", "2,2,0",
        "--eps-grid", "0:1:0.5", "--n-select", "2000", "--n-detect", "10000", "--csv", csv,
    )
    rows = json.loads(out)
    assert code == 0 and [r["eps"] for r in rows] == [0.0, 0.5, 1.0]
    assert rows[0]["p"] < 0.05
    assert csv.read_text().startswith("eps,p,event,direction")


def test_lower_bound_with_interval(capsys):
    code, out, _ = run(
        capsys, "lower-bound", "--mechanism", "geometric", "--interval", "0.5,1.0", "--kmax", "1", "--precision-eps", "0.01"
    )
    res = json.loads(out)
    assert code == 0 and res["status"] == "bracketed"
    assert res["eps_lo"] < 0.6932 < res["eps_hi"]


def test_lower_bound_needs_inputs_without_interval(capsys):
    assert run(capsys, "lower-bound", "--mechanism", "naive-noisy-max")[0] == 2


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "hmmpriv.cli", "build-model", "--mechanism", "geometric"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["states"] == ["0", "1", "2"]
