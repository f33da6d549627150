from fractions import Fraction as F

import pytest

from conftest import needs_solver
from hmmpriv import smt
from hmmpriv.hmm import InformationState
from hmmpriv.mechanisms import build_geometric_hmm
from hmmpriv.scenario import independent_count_scenario, scenario_queries
from hmmpriv.verifier import VerificationQuery, certify_counterexample

GEO = build_geometric_hmm()
ZERO = InformationState.from_values(GEO, [1, 0, 0])
TWO = InformationState.from_values(GEO, [0, 0, 1])


def concrete(c=F(2), k=1, policy="any"):
    return VerificationQuery(GEO, ZERO, TWO, c, k, policy)


def parametric(c=F(2), k=1):
    pi, tau = scenario_queries(independent_count_scenario(), GEO)[0]
    return VerificationQuery(GEO, pi, tau, c, k)


def test_emit_is_deterministic():
    a = smt.emit_script(smt.build_query(parametric(k=2)))
    b = smt.emit_script(smt.build_query(parametric(k=2)))
    assert a == b


def test_logic_follows_parameters():
    assert smt.build_query(concrete()).logic == "QF_LRA"
    ast = smt.build_query(parametric())
    assert ast.logic == "QF_NRA" and ast.param_names == ["p"]
    assert ast.param_bounds["p"] == (0, 1)
    assert smt.emit_script(ast).startswith("(set-logic QF_NRA)")


def test_one_observation_variable_per_step():
    for k in (1, 3):
        ast = smt.build_query(concrete(k=k))
        assert ast.obs_vars == [f"w_{t}" for t in range(k)]
        script = smt.emit_script(ast)
        assert sum(line.startswith("(declare-const w_") for line in script.splitlines()) == k
        assert f"(get-value ({' '.join(ast.obs_vars)}))" in script


def test_script_size_is_linear_in_k():
    sizes = [len(smt.emit_script(smt.build_query(concrete(k=k)))) for k in (2, 4, 8)]
    assert sizes[2] - sizes[1] < 2.5 * (sizes[1] - sizes[0])


def test_both_policy_adds_positivity():
    any_ast = smt.build_query(concrete(policy="any"))
    both_ast = smt.build_query(concrete(policy="both"))
    assert len(both_ast.constraints) == len(any_ast.constraints) + 2


def test_unknown_direction():
    with pytest.raises(ValueError):
        smt.build_query(concrete(), "pi<tau")


def test_solver_config_timeout():
    with pytest.raises(ValueError):
        smt.SolverConfig("z3 -in", 0)


# model parsing --------------------------------------------------------------------------


def test_parse_define_fun_model():
    text = "(model\n  (define-fun w_0 () Real 1.0)\n  (define-fun p () Real (/ 1.0 2.0))\n)"
    assert smt.parse_model(text) == {"w_0": 1, "p": F(1, 2)}


def test_parse_get_value_forms():
    assert smt.parse_model("((w_0 2.0) (p 0.5))") == {"w_0": 2, "p": F(1, 2)}
    assert smt.parse_model("((p (- (/ 1 3))))") == {"p": F(-1, 3)}


def test_observation_values_become_symbols():
    got = smt.parse_model("((w_0 0) (w_1 2.0) (p (/ 1 4)))", GEO.observations)
    assert got == {"w_0": "~0", "w_1": "~2", "p": F(1, 4)}


def test_observation_out_of_range():
    with pytest.raises(smt.SmtError):
        smt.parse_model("((w_0 3))", GEO.observations)
    with pytest.raises(smt.SmtError):
        smt.parse_model("((w_0 (/ 1 2)))", GEO.observations)


@pytest.mark.parametrize(
    "text",
    [
        "((p (root-obj (+ (^ x 2) (- 2)) 1)))",
        "((p (",
        "((p abc))",
        "((p 1 2 3))",
        "((p (sqrt 2)))",
    ],
)
def test_unsupported_or_malformed_models(text):
    with pytest.raises(smt.SmtError):
        smt.parse_model(text)


def test_model_assignment_splits_sequence_and_params():
    ast = smt.build_query(parametric(k=2))
    seq, params = smt.model_assignment(ast, {"w_0": F(0), "w_1": "~2", "p": F(1, 3)})
    assert seq == ("~0", "~2") and params == {"p": F(1, 3)}


# solver process -----------------------------------------------------------------------


def test_missing_solver_is_backend_unavailable():
    res = smt.run_solver("(check-sat)\n", smt.SolverConfig("no-such-solver-binary -in"))
    assert res.status == "unknown(backend-unavailable)"
    assert "backend-unavailable" in res.detail


@needs_solver
def test_trivially_unsat_script():
    assert smt.run_solver("(assert false)\n(check-sat)\n").status == "unsat"


@needs_solver
def test_concrete_query_matches_known_ratio():
    # the worst ratio for 0 versus 2 is 4
    assert smt.solve(smt.build_query(concrete(F(2)))).status == "sat"
    assert smt.solve(smt.build_query(concrete(F(4)))).status == "unsat"
    assert smt.solve(smt.build_query(concrete(F(4)), "tau>c*pi")).status == "unsat"


@needs_solver
def test_solver_model_round_trips_through_certification():
    q = parametric(F(5, 4))
    ast = smt.build_query(q)
    res = smt.solve(ast)
    assert res.status == "sat"
    seq, params = smt.model_assignment(ast, res.model)
    cert = certify_counterexample(GEO, q.pi, q.tau, q.c, seq, params)
    assert cert["valid"]
    assert 0 <= params["p"] <= 1
