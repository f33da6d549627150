import itertools
import json
from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from hmmpriv import symbols
from hmmpriv.algebra import Poly
from hmmpriv.hmm import (
    Hmm,
    InformationState,
    ModelError,
    Param,
    enumerate_sequences,
    forward_init,
    forward_step,
    path_sum_probability,
    sequence_probability,
)
from hmmpriv.mechanisms import (
    NoisyMaxSpec,
    at_state,
    build_above_threshold_hmm,
    build_geometric_hmm,
    build_noisy_max_hmm,
)

GEO = build_geometric_hmm()


def point(h, s):
    return InformationState.point_mass(h, s)


# forward recursion ----------------------------------------------------------------


def test_forward_init_examples():
    fs = forward_init(GEO, InformationState.from_values(GEO, [0, 0, 1]), "~1")
    assert fs.dense(3) == [0, 0, F(1, 6)]
    fs = forward_init(GEO, InformationState.from_values(GEO, [0, 1, 0]), "~1")
    assert fs.dense(3) == [0, F(1, 3), 0]


def test_forward_init_zero_emission():
    h = Hmm(["a", "b"], ["x", "y"], [("a", "a", 1), ("b", "b", 1)], [("a", "x", 1), ("b", "y", 1)])
    assert forward_init(h, point(h, "a"), "y").is_zero()


def test_unknown_symbol_rejected():
    with pytest.raises(ModelError):
        forward_init(GEO, point(GEO, "0"), "~9")
    with pytest.raises(ModelError):
        sequence_probability(GEO, point(GEO, "0"), [])


def test_identity_chain_step_is_pointwise():
    pi = InformationState.from_values(GEO, ["1/2", "1/4", "1/4"])
    fs = forward_init(GEO, pi, "~0")
    step = forward_step(GEO, fs, "~2")
    expect = [fs.dense(3)[i] * GEO.emission(s, "~2") for i, s in enumerate(GEO.states)]
    assert step.dense(3) == expect
    assert step.t == 1


def test_above_threshold_branch_term():
    h = build_above_threshold_hmm()
    fs = forward_init(h, point(h, at_state("input", 2, 1)), symbols.BLANK)
    fs = forward_step(h, fs, "11")
    fs = forward_step(h, fs, symbols.BOT)
    # threshold 2 -> noisy 1 (3/20), sync "11" (1/3), query 1 -> noisy 0 (1/3) which is below 1
    alpha = fs.alpha[h.state_id(at_state("noisy", 1, 0))]
    assert alpha == F(3, 20) * F(1, 3) * F(1, 3)


def test_above_threshold_closed_form_n2():
    h = build_above_threshold_hmm()
    seq = (symbols.BLANK, "12", "bot", "12", "bot", "21", "top")
    a = F(3, 20) * F(1, 3) ** 2 * F(5, 6) + F(4, 5) * F(2, 3) ** 2 * F(2, 3)
    assert sequence_probability(h, point(h, at_state("input", 2, 1)), seq) == a * F(1, 3) ** 5


def test_parametric_sequence_probability():
    p = Poly.param("p")
    pi = InformationState.from_values(GEO, [(1 - p) ** 2, 2 * p * (1 - p), p * p])
    got = sequence_probability(GEO, pi, ["~0"])
    assert 6 * got == p * p - 4 * p + 4


# enumeration ---------------------------------------------------------------------------


def test_enumerate_k1_all_observations():
    seqs = list(enumerate_sequences(GEO, point(GEO, "0"), point(GEO, "2"), 1))
    assert seqs == [("~0",), ("~1",), ("~2",)]


def test_enumerate_both_disjoint_is_empty():
    h = Hmm(["a", "b"], ["top", "bot"], [("a", "a", 1), ("b", "b", 1)], [("a", "top", 1), ("b", "bot", 1)])
    assert list(enumerate_sequences(h, point(h, "a"), point(h, "b"), 2, "both")) == []
    assert len(list(enumerate_sequences(h, point(h, "a"), point(h, "b"), 2, "any"))) == 2


def test_above_threshold_both_excludes_suits():
    h = build_above_threshold_hmm()
    pi, tau = point(h, at_state("input", 0, 0)), point(h, at_state("input", 0, 1, "bottom"))
    seen = 0
    for seq in enumerate_sequences(h, pi, tau, 5, "both"):
        seen += 1
        assert not set(seq) & set(symbols.SUITS)
    assert seen > 0
    any_seqs = list(enumerate_sequences(h, pi, tau, 3, "any"))
    assert any(set(s) & set(symbols.SUITS) for s in any_seqs)


@pytest.mark.parametrize("model", ["geometric", "noisy_max"])
@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_probabilities_sum_to_one(model, k):
    h = GEO if model == "geometric" else build_noisy_max_hmm(NoisyMaxSpec("improved", 3))
    start = point(h, h.states[1])
    total = sum(sequence_probability(h, start, seq) for seq in itertools.product(h.observations, repeat=k))
    assert total == 1


# random small models -------------------------------------------------------------------


@st.composite
def small_models(draw):
    n = draw(st.integers(2, 5))
    m = draw(st.integers(2, 3))
    states = [f"s{i}" for i in range(n)]
    obs = [f"o{j}" for j in range(m)]

    def row(width):
        weights = draw(st.lists(st.integers(0, 3), min_size=width, max_size=width).filter(any))
        total = sum(weights)
        return [F(w, total) for w in weights]

    trans = [(a, b, p) for a in states for b, p in zip(states, row(n)) if p]
    emit = [(a, w, p) for a in states for w, p in zip(obs, row(m)) if p]
    h = Hmm(states, obs, trans, emit)
    start = InformationState.from_values(h, row(n))
    other = InformationState.from_values(h, row(n))
    return h, start, other


@settings(max_examples=60, deadline=None)
@given(small_models(), st.integers(1, 3), st.data())
def test_forward_matches_path_sums(model, k, data):
    h, pi, _ = model
    seq = data.draw(st.tuples(*[st.sampled_from(h.observations)] * k))
    fwd = sequence_probability(h, pi, seq)
    assert fwd == path_sum_probability(h, pi, seq)
    assert fwd == oracles.path_sum(h.to_json(), list(pi.numerators), seq)


@settings(max_examples=40, deadline=None)
@given(small_models(), st.integers(1, 3), st.sampled_from(["any", "both"]))
def test_pruned_enumeration_matches_full_scan(model, k, policy):
    h, pi, tau = model
    got = set(enumerate_sequences(h, pi, tau, k, policy))
    want = set()
    for seq in itertools.product(h.observations, repeat=k):
        a, b = sequence_probability(h, pi, seq), sequence_probability(h, tau, seq)
        if (a and b) if policy == "both" else (a or b):
            want.add(seq)
    assert got == want


@settings(max_examples=30, deadline=None)
@given(small_models(), st.integers(1, 4))
def test_forward_mass_never_exceeds_one(model, k):
    h, pi, _ = model
    fs = forward_init(h, pi, h.observations[0])
    for _ in range(k):
        assert 0 <= fs.total() <= 1
        fs = forward_step(h, fs, h.observations[-1])


# validation and serialisation ------------------------------------------------------------


def test_rows_must_sum_to_one():
    with pytest.raises(ModelError, match="transition row"):
        Hmm(["a"], ["x"], [("a", "a", F(1, 2))], [("a", "x", 1)])
    with pytest.raises(ModelError, match="emission row"):
        Hmm(["a"], ["x", "y"], [("a", "a", 1)], [("a", "x", F(1, 2))])


def test_structural_errors():
    with pytest.raises(ModelError):
        Hmm(["a", "a"], ["x"], [], [])
    with pytest.raises(ModelError):
        Hmm(["a"], ["x"], [("a", "b", 1)], [("a", "x", 1)])
    with pytest.raises(ModelError):
        Hmm(["a"], ["x"], [("a", "a", 1)], [("a", "z", 1)])


def test_parametric_rows_checked_symbolically_and_on_grid():
    p = Poly.param("p")
    h = Hmm(["a", "b"], ["x"], [("a", "a", p), ("a", "b", 1 - p), ("b", "b", 1)], [("a", "x", 1), ("b", "x", 1)], [Param("p")])
    assert h.param_names() == ["p"]
    with pytest.raises(ModelError, match="undeclared"):
        Hmm(["a", "b"], ["x"], [("a", "a", p), ("a", "b", 1 - p), ("b", "b", 1)], [("a", "x", 1), ("b", "x", 1)])
    with pytest.raises(ModelError, match="leaves"):
        Hmm(["a", "b"], ["x"], [("a", "a", 2 * p), ("a", "b", 1 - 2 * p), ("b", "b", 1)], [("a", "x", 1), ("b", "x", 1)], [Param("p")])


def test_information_state_check():
    InformationState.from_values(GEO, ["1/2", "1/2", 0]).check(GEO)
    with pytest.raises(ModelError):
        InformationState.from_values(GEO, ["1/2", "1/4", 0]).check(GEO)
    with pytest.raises(ModelError):
        InformationState.from_values(GEO, [1, 0])


@pytest.mark.parametrize(
    "build", [lambda: GEO, build_above_threshold_hmm, lambda: build_noisy_max_hmm(NoisyMaxSpec("naive", 2))]
)
def test_json_roundtrip(build):
    h = build()
    back = Hmm.from_json(json.loads(h.dumps()))
    assert back.to_json() == h.to_json()


def test_json_roundtrip_parametric_with_initial_distribution():
    p = Poly.param("p")
    h = Hmm(["a", "b"], ["x", "y"], [("a", "a", 1), ("b", "b", 1)], [("a", "x", p), ("a", "y", 1 - p), ("b", "x", 1)], [Param("p")])
    h.initial_distributions["start"] = InformationState.from_values(h, [p, 1 - p])
    back = Hmm.from_json(json.loads(h.dumps()))
    assert back.to_json() == h.to_json()
    assert back.initial_distributions["start"].numerators == (p, 1 - p)


def test_malformed_json():
    with pytest.raises(ModelError):
        Hmm.from_json({"states": ["a"]})
    with pytest.raises(ModelError):
        Hmm.from_json({"states": ["a"], "observations": ["x"], "transitions": [["a", "a", "x/y"]], "emissions": []})
