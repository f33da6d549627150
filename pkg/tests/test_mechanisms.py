import itertools
import math
from collections import Counter
from fractions import Fraction as F

import numpy as np
import pytest
from scipy import stats

import oracles
from hmmpriv import symbols
from hmmpriv.hmm import InformationState, sequence_probability
from hmmpriv.mechanisms import (
    AT_OBSERVATIONS,
    AboveThresholdSpec,
    GeometricSpec,
    MechanismError,
    NoisyMaxSpec,
    above_threshold_observations,
    at_state,
    build_above_threshold_hmm,
    build_geometric_hmm,
    build_noisy_max_hmm,
    decode_output,
    exact_output_distribution,
    geometric_row,
    run_mechanism,
    sample_codes,
)

BOT, TOP = symbols.BOT, symbols.TOP


@pytest.mark.parametrize(
    "alpha,value,row",
    [
        (F(1, 2), 0, (F(2, 3), F(1, 6), F(1, 6))),
        (F(1, 2), 1, (F(1, 3), F(1, 3), F(1, 3))),
        (F(1, 4), 1, (F(1, 5), F(3, 5), F(1, 5))),
        (F(1, 4), 0, (F(4, 5), F(3, 20), F(1, 20))),
    ],
)
def test_geometric_row_examples(alpha, value, row):
    assert geometric_row(GeometricSpec(alpha, 2), value) == row


@pytest.mark.parametrize("alpha", [F(1, 2), F(1, 4), F(1, 3), F(2, 3)])
@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_geometric_row_matches_tail_sums(alpha, n):
    for x in range(n + 1):
        row = geometric_row(GeometricSpec(alpha, n), x)
        assert list(row) == oracles.geometric_row(alpha, n, x)
        assert sum(row) == 1


def test_geometric_spec_errors():
    with pytest.raises(MechanismError):
        GeometricSpec(F(1), 2)
    with pytest.raises(MechanismError):
        GeometricSpec(F(1, 2), 0)
    with pytest.raises(MechanismError):
        geometric_row(GeometricSpec(), 3)
    with pytest.raises(MechanismError):
        NoisyMaxSpec("weird")
    with pytest.raises(MechanismError):
        NoisyMaxSpec("naive", 1)


def test_geometric_model_shape():
    h = build_geometric_hmm()
    assert h.states == ("0", "1", "2")
    assert h.observations == ("~0", "~1", "~2")
    assert all(h.transition(s, s) == 1 for s in h.states)


def test_noisy_max_model_examples():
    naive = build_noisy_max_hmm(NoisyMaxSpec("naive", 3))
    improved = build_noisy_max_hmm(NoisyMaxSpec("improved", 3))
    assert naive.emission("~022", "~2") == 1
    assert improved.emission("~022", "~2") == F(1, 2)
    assert improved.emission("~022", "~3") == F(1, 2)
    assert naive.transition("011", "~022") == F(2, 3) * F(1, 3) * F(1, 3)
    assert naive.emission("011", symbols.BLANK) == 1
    assert len(naive.states) == 54


def test_above_threshold_model_examples():
    h = build_above_threshold_hmm()
    assert h.observations == AT_OBSERVATIONS
    assert set(h.observations) == {"_", "bot", "top", "00", "01", "10", "11", "12", "21", "22", *symbols.SUITS}
    assert "02" not in h.observations and "20" not in h.observations
    assert h.transition(at_state("input", 0, 1), at_state("threshold", 1, 1)) == F(3, 20)
    # noisy states emit top iff the noisy query reaches the noisy threshold, then return uniformly
    assert h.emission(at_state("noisy", 1, 1), TOP) == 1
    assert h.emission(at_state("noisy", 2, 1), BOT) == 1
    for r in range(3):
        assert h.transition(at_state("noisy", 1, 0), at_state("threshold", 1, r)) == F(1, 3)


@pytest.mark.parametrize(
    "build",
    [
        build_geometric_hmm,
        lambda: build_geometric_hmm(GeometricSpec(F(1, 3), 4)),
        lambda: build_noisy_max_hmm(NoisyMaxSpec("naive", 2)),
        lambda: build_noisy_max_hmm(NoisyMaxSpec("improved", 3)),
        build_above_threshold_hmm,
    ],
)
def test_rows_sum_to_one(build):
    h = build()
    for i in range(h.n_states):
        assert sum(p for _, p in h.chain.rows[i]) == 1
        assert sum(p for _, p in h.emission_rows[i]) == 1


# exact oracle ------------------------------------------------------------------------


@pytest.mark.parametrize("variant", ["naive", "improved"])
def test_noisy_max_distribution_matches_direct_enumeration(variant):
    spec = NoisyMaxSpec(variant, 3)
    for values in itertools.product(range(3), repeat=3):
        got = exact_output_distribution(spec, values)
        want = oracles.noisy_max_distribution(values, variant)
        assert got == {(spec.index_symbol(i),): p for i, p in want.items() if p}
        assert sum(got.values()) == 1


def test_naive_two_queries_nine_terms():
    got = exact_output_distribution(NoisyMaxSpec("naive", 2, index_base=0), (0, 0))
    row = oracles.geometric_row(F(1, 2), 2, 0)
    first = sum(row[a] * row[b] for a in range(3) for b in range(3) if a >= b)
    assert got[("~0",)] == first


def test_improved_symmetric_input_is_uniform():
    got = exact_output_distribution(NoisyMaxSpec("improved", 3), (2, 2, 2))
    assert set(got.values()) == {F(1, 3)}


def test_noisy_max_too_large():
    with pytest.raises(MechanismError):
        exact_output_distribution(NoisyMaxSpec("naive", 4), (0, 0, 0, 0))


@pytest.mark.parametrize("q", [1, 2, 3, 4])
def test_above_threshold_distribution_matches_noise_enumeration(q):
    spec = AboveThresholdSpec()
    for t in range(3):
        for stream in itertools.product(range(3), repeat=q):
            got = exact_output_distribution(spec, (t, stream))
            want = {k: v for k, v in oracles.above_threshold_distribution(t, stream).items() if v}
            assert got == want
            assert sum(got.values()) == 1


@pytest.mark.parametrize("n", range(1, 9))
def test_above_threshold_closed_form(n):
    a = F(3, 20) * F(1, 3) ** n * F(5, 6) + F(4, 5) * F(2, 3) ** n * F(2, 3)
    got = exact_output_distribution(AboveThresholdSpec(), (2, (1,) * n + (2,)))
    assert got[(BOT,) * n + (TOP,)] == a


@pytest.mark.parametrize("q", [1, 2, 3])
def test_model_carries_one_third_per_sync_and_return(q):
    """q queries ending in top: the model probability is the algorithm's times (1/3)^(2q-1)."""
    spec = AboveThresholdSpec()
    h = build_above_threshold_hmm()
    outputs = (BOT,) * (q - 1) + (TOP,)
    for stream in itertools.product(range(3), repeat=q):
        for t in range(3):
            seq = above_threshold_observations(stream, stream, outputs)
            start = InformationState.point_mass(h, at_state("input", t, stream[0]))
            algo = exact_output_distribution(spec, (t, stream)).get(outputs, F(0))
            assert sequence_probability(h, start, seq) == algo * F(1, 3) ** (2 * q - 1)


def test_observation_mapping_rejects_far_streams():
    with pytest.raises(MechanismError):
        above_threshold_observations((0,), (2,), (TOP,))
    with pytest.raises(MechanismError):
        above_threshold_observations((0,), (1,), (BOT, TOP))


# sampling ------------------------------------------------------------------------------


def test_run_is_deterministic_per_seed():
    spec = NoisyMaxSpec("improved", 3)
    runs = [run_mechanism(spec, (1, 2, 0), s).outputs for s in range(50)]
    assert runs == [run_mechanism(spec, (1, 2, 0), s).outputs for s in range(50)]
    assert len(set(runs)) > 1


def test_run_input_errors():
    with pytest.raises(MechanismError):
        run_mechanism(NoisyMaxSpec("naive", 3), (0, 3, 1), 0)
    with pytest.raises(MechanismError):
        run_mechanism(NoisyMaxSpec("naive", 3), (0, 1), 0)
    with pytest.raises(MechanismError):
        run_mechanism(AboveThresholdSpec(), (2, (0, -1)), 0)
    with pytest.raises(MechanismError):
        run_mechanism(AboveThresholdSpec(), 5, 0)


def test_above_threshold_runs_have_bot_star_top_shape():
    spec = AboveThresholdSpec()
    for seed in range(300):
        out = run_mechanism(spec, (2, (0, 1, 0, 2)), seed).outputs
        assert all(w == BOT for w in out[:-1])
        assert out[-1] == TOP or len(out) == 4


def test_above_threshold_all_bot_when_threshold_unreachable():
    # threshold 2, queries all 0: a top needs the noisy query to reach the noisy threshold
    spec = AboveThresholdSpec()
    for seed in range(200):
        run = run_mechanism(spec, (2, (0, 0, 0)), seed)
        if run.outputs[0] == TOP:
            continue
        assert run.outputs[0] == BOT


def test_literal_runs_agree_with_exact_naive():
    spec = NoisyMaxSpec("naive", 3)
    n = 100_000
    counts = Counter(run_mechanism(spec, (2, 0, 0), s).outputs for s in range(n))
    exact = exact_output_distribution(spec, (2, 0, 0))
    for out, p in exact.items():
        sigma = math.sqrt(n * p * (1 - p))
        assert abs(counts[out] - n * p) <= 4 * sigma


def test_literal_runs_improved_uniform_on_equal_inputs():
    spec = NoisyMaxSpec("improved", 3)
    counts = Counter(run_mechanism(spec, (0, 0, 0), s).outputs for s in range(30_000))
    _, pvalue = stats.chisquare([counts[(f"~{i}",)] for i in (1, 2, 3)])
    assert pvalue > 1e-4


@pytest.mark.parametrize(
    "spec,inp",
    [
        (NoisyMaxSpec("naive", 3), (2, 0, 1)),
        (NoisyMaxSpec("improved", 3), (1, 1, 0)),
        (AboveThresholdSpec(), (1, (0, 1, 2))),
        (AboveThresholdSpec(), (2, (1, 1, 2))),
    ],
)
def test_vectorised_sampler_agrees_with_exact(spec, inp):
    n = 100_000
    codes = sample_codes(spec, inp, n, np.random.default_rng(7))
    counts = Counter(decode_output(spec, inp, int(c)) for c in codes)
    exact = exact_output_distribution(spec, inp)
    assert set(counts) <= set(exact)
    for out, p in exact.items():
        sigma = math.sqrt(n * p * (1 - p))
        assert abs(counts[out] - n * p) <= 4 * sigma + 1
