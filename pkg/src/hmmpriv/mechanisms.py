"""Discrete privacy mechanisms: HMM builders, seeded samplers and exact output oracles.

Three mechanisms are covered: the truncated geometric mechanism, discrete
Noisy Max (first-index and uniform tie-breaking variants) and discrete Above
Threshold.  Each has

* a builder compiling it into an :class:`~hmmpriv.hmm.Hmm`,
* :func:`run_mechanism`, which executes the algorithm literally with a seeded
  generator, plus a vectorised :func:`sample_codes` for the statistical tester,
* :func:`exact_output_distribution`, which enumerates every noise outcome.
"""

from __future__ import annotations

import itertools
import random
from bisect import bisect_right
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import lcm
from typing import Sequence

import numpy as np

from . import symbols
from .hmm import Hmm

SELF_LOOP = Fraction(1)


class MechanismError(ValueError):
    pass


@dataclass(frozen=True)
class GeometricSpec:
    alpha: Fraction = Fraction(1, 2)
    n: int = 2

    def __post_init__(self):
        object.__setattr__(self, "alpha", Fraction(self.alpha))
        if not 0 < self.alpha < 1:
            raise MechanismError("geometric alpha must lie strictly between 0 and 1")
        if self.n < 1:
            raise MechanismError("geometric range needs n >= 1")


@dataclass(frozen=True)
class NoisyMaxSpec:
    variant: str = "improved"  # "naive" (first max wins) or "improved" (uniform over ties)
    n_queries: int = 3
    noise: GeometricSpec = field(default_factory=GeometricSpec)
    index_base: int = 1

    def __post_init__(self):
        if self.variant not in ("naive", "improved"):
            raise MechanismError(f"unknown Noisy Max variant {self.variant!r}")
        if self.n_queries < 2:
            raise MechanismError("Noisy Max needs at least two queries")

    @property
    def kind(self) -> str:
        return "noisy_max"

    def index_symbol(self, position: int) -> str:
        return symbols.tilde(position + self.index_base)


@dataclass(frozen=True)
class AboveThresholdSpec:
    threshold_noise: GeometricSpec = field(default_factory=lambda: GeometricSpec(Fraction(1, 4), 2))
    query_noise: GeometricSpec = field(default_factory=lambda: GeometricSpec(Fraction(1, 2), 2))

    def __post_init__(self):
        if self.threshold_noise.n != 2 or self.query_noise.n != 2:
            raise MechanismError("the Above Threshold model is defined for values in {0,1,2}")

    @property
    def kind(self) -> str:
        return "above_threshold"


@dataclass(frozen=True)
class MechanismRun:
    outputs: tuple
    seed: int | None = None
    input: object = None

    def to_json(self) -> dict:
        return {"seed": self.seed, "input": _input_json(self.input), "outputs": list(self.outputs)}


def _input_json(inp):
    if isinstance(inp, tuple) and len(inp) == 2 and isinstance(inp[1], (tuple, list)):
        return {"threshold": inp[0], "queries": list(inp[1])}
    return list(inp) if inp is not None else None


# geometric ----------------------------------------------------------------


@lru_cache(maxsize=256)
def geometric_row(spec: GeometricSpec, true_value: int) -> tuple:
    """Output distribution of the truncated alpha-geometric mechanism over {0..n}."""
    a, n = spec.alpha, spec.n
    if not 0 <= true_value <= n:
        raise MechanismError(f"true value {true_value} outside 0..{n}")
    row = []
    for z in range(n + 1):
        if z == 0:
            row.append(a**true_value / (1 + a))
        elif z == n:
            row.append(a ** (n - true_value) / (1 + a))
        else:
            row.append((1 - a) / (1 + a) * a ** abs(z - true_value))
    return tuple(row)


def build_geometric_hmm(spec: GeometricSpec = GeometricSpec()) -> Hmm:
    states = [str(i) for i in range(spec.n + 1)]
    observations = [symbols.tilde(i) for i in range(spec.n + 1)]
    transitions = [(s, s, SELF_LOOP) for s in states]
    emissions = [
        (states[i], observations[z], p)
        for i in range(spec.n + 1)
        for z, p in enumerate(geometric_row(spec, i))
    ]
    return Hmm(states, observations, transitions, emissions)


# Noisy Max ----------------------------------------------------------------


def tuple_name(values: Sequence[int]) -> str:
    return "".join(str(v) for v in values)


def noisy_max_top_state(values: Sequence[int]) -> str:
    return tuple_name(values)


def noisy_max_bottom_state(values: Sequence[int]) -> str:
    return "~" + tuple_name(values)


def _argmax_positions(values: Sequence[int]) -> list:
    m = max(values)
    return [i for i, v in enumerate(values) if v == m]


def build_noisy_max_hmm(spec: NoisyMaxSpec = NoisyMaxSpec()) -> Hmm:
    """Top states hold query results and emit the blank; bottom states hold noisy results."""
    rng = range(spec.noise.n + 1)
    tuples = list(itertools.product(rng, repeat=spec.n_queries))
    rows = {v: geometric_row(spec.noise, v) for v in rng}
    top = [noisy_max_top_state(t) for t in tuples]
    bottom = [noisy_max_bottom_state(t) for t in tuples]
    observations = [symbols.BLANK] + [spec.index_symbol(i) for i in range(spec.n_queries)]

    transitions = []
    for t, name in zip(tuples, top):
        for u, noisy_name in zip(tuples, bottom):
            p = Fraction(1)
            for a, b in zip(t, u):
                p *= rows[a][b]
            transitions.append((name, noisy_name, p))
    transitions += [(b, b, SELF_LOOP) for b in bottom]

    emissions = [(name, symbols.BLANK, Fraction(1)) for name in top]
    for u, noisy_name in zip(tuples, bottom):
        winners = _argmax_positions(u)
        if spec.variant == "naive":
            emissions.append((noisy_name, spec.index_symbol(winners[0]), Fraction(1)))
        else:
            for i in winners:
                emissions.append((noisy_name, spec.index_symbol(i), Fraction(1, len(winners))))
    return Hmm(top + bottom, observations, transitions, emissions)


# Above Threshold ------------------------------------------------------------

AT_OBSERVATIONS = (
    symbols.BLANK,
    symbols.BOT,
    symbols.TOP,
    "00",
    "01",
    "10",
    "11",
    "12",
    "21",
    "22",
    *symbols.SUITS,
)
_VALUES = (0, 1, 2)


def at_state(kind: str, t: int, r: int, copy: str = "top") -> str:
    """State names: ``t2r1`` (input), ``~t2r1`` (noisy threshold), ``~t2~r1`` (both noisy).

    States of the bottom copy carry a trailing underscore.
    """
    base = {"input": f"t{t}r{r}", "threshold": f"~t{t}r{r}", "noisy": f"~t{t}~r{r}"}[kind]
    return base + ("_" if copy == "bottom" else "")


def _sync_emissions(r: int, copy: str) -> list:
    # top copy with query result j emits "jl"; bottom copy with result l emits "jl"
    third = Fraction(1, 3)
    partners = [x for x in _VALUES if abs(x - r) <= 1]
    if copy == "top":
        out = [(f"{r}{x}", third) for x in partners]
        pad = {0: "sB", 2: "sA"}
    else:
        out = [(f"{x}{r}", third) for x in partners]
        pad = {0: "sD", 2: "sC"}
    if len(partners) == 2:
        out.append((pad[r], third))
    return out


def build_above_threshold_hmm(spec: AboveThresholdSpec = AboveThresholdSpec()) -> Hmm:
    states, transitions, emissions = [], [], []
    back = Fraction(1, len(_VALUES))
    for copy in ("top", "bottom"):
        for t in _VALUES:
            for r in _VALUES:
                states.append(at_state("input", t, r, copy))
        for t in _VALUES:
            for r in _VALUES:
                states.append(at_state("threshold", t, r, copy))
        for t in _VALUES:
            for r in _VALUES:
                states.append(at_state("noisy", t, r, copy))

        for t in _VALUES:
            trow = geometric_row(spec.threshold_noise, t)
            for r in _VALUES:
                src = at_state("input", t, r, copy)
                emissions.append((src, symbols.BLANK, Fraction(1)))
                for nt in _VALUES:
                    transitions.append((src, at_state("threshold", nt, r, copy), trow[nt]))
        for nt in _VALUES:
            for r in _VALUES:
                src = at_state("threshold", nt, r, copy)
                for w, p in _sync_emissions(r, copy):
                    emissions.append((src, w, p))
                qrow = geometric_row(spec.query_noise, r)
                for nr in _VALUES:
                    transitions.append((src, at_state("noisy", nt, nr, copy), qrow[nr]))
        for nt in _VALUES:
            for nr in _VALUES:
                src = at_state("noisy", nt, nr, copy)
                emissions.append((src, symbols.TOP if nr >= nt else symbols.BOT, Fraction(1)))
                for r in _VALUES:
                    transitions.append((src, at_state("threshold", nt, r, copy), back))
    return Hmm(states, AT_OBSERVATIONS, transitions, emissions)


def above_threshold_adjacency() -> list:
    """Neighbouring initial states: same threshold, first query results differing by <= 1."""
    pairs = []
    for t in _VALUES:
        for j in _VALUES:
            for l in _VALUES:
                if abs(j - l) <= 1:
                    pairs.append((at_state("input", t, j, "top"), at_state("input", t, l, "bottom")))
    return pairs


def above_threshold_observations(top_stream: Sequence[int], bottom_stream: Sequence[int], outputs: Sequence[str]) -> tuple:
    """Observation sequence ``_, i1j1, a1, i2j2, a2, ...`` for a pair of query streams."""
    if len(outputs) > min(len(top_stream), len(bottom_stream)):
        raise MechanismError("more outputs than queries")
    seq = [symbols.BLANK]
    for k, a in enumerate(outputs):
        if abs(top_stream[k] - bottom_stream[k]) > 1:
            raise MechanismError("query streams are not neighbouring")
        seq.append(f"{top_stream[k]}{bottom_stream[k]}")
        seq.append(a)
    return tuple(seq)


# literal execution ----------------------------------------------------------


@lru_cache(maxsize=256)
def _integer_cdf(row: tuple) -> tuple:
    den = lcm(*(p.denominator for p in row))
    acc, cdf = 0, []
    for p in row:
        acc += p.numerator * (den // p.denominator)
        cdf.append(acc)
    if acc != den:
        raise AssertionError("distribution does not sum to one")
    return den, tuple(cdf)


def _draw(rng: random.Random, row: Sequence[Fraction]) -> int:
    den, cdf = _integer_cdf(tuple(row))
    return bisect_right(cdf, rng.randrange(den))


def _check_values(values: Sequence[int], n: int):
    for v in values:
        if not isinstance(v, int) or not 0 <= v <= n:
            raise MechanismError(f"input value {v!r} outside 0..{n}")


def _split_at_input(inp):
    try:
        threshold, stream = inp
        stream = tuple(stream)
    except (TypeError, ValueError):
        raise MechanismError("Above Threshold input is (threshold, query results)") from None
    return threshold, stream


def run_mechanism(spec, inp, seed: int) -> MechanismRun:
    rng = random.Random(seed)
    if isinstance(spec, NoisyMaxSpec):
        values = tuple(inp)
        _check_values(values, spec.noise.n)
        if len(values) != spec.n_queries:
            raise MechanismError(f"expected {spec.n_queries} query results, got {len(values)}")
        m, r, c = -1, 0, 0
        for i, v in enumerate(values):
            noisy = _draw(rng, geometric_row(spec.noise, v))
            if spec.variant == "improved" and m == noisy:
                c += 1
                if rng.randrange(c) == 0:
                    r = i
            if m < noisy:
                m, r, c = noisy, i, 1
        return MechanismRun((spec.index_symbol(r),), seed, values)
    if isinstance(spec, AboveThresholdSpec):
        threshold, stream = _split_at_input(inp)
        _check_values((threshold, *stream), 2)
        noisy_t = _draw(rng, geometric_row(spec.threshold_noise, threshold))
        outputs = []
        for v in stream:
            if _draw(rng, geometric_row(spec.query_noise, v)) >= noisy_t:
                outputs.append(symbols.TOP)
                break
            outputs.append(symbols.BOT)
        return MechanismRun(tuple(outputs), seed, (threshold, stream))
    raise MechanismError(f"unsupported mechanism spec {spec!r}")


# exact oracle ---------------------------------------------------------------

MAX_NOISY_MAX_QUERIES = 3


def exact_output_distribution(spec, inp) -> dict:
    """Exact output distribution by enumerating every noise outcome of the algorithm."""
    out: dict = {}
    if isinstance(spec, NoisyMaxSpec):
        values = tuple(inp)
        _check_values(values, spec.noise.n)
        if len(values) > MAX_NOISY_MAX_QUERIES:
            raise MechanismError("instance too large for exhaustive enumeration")
        rows = [geometric_row(spec.noise, v) for v in values]
        for noisy in itertools.product(range(spec.noise.n + 1), repeat=len(values)):
            p = Fraction(1)
            for row, z in zip(rows, noisy):
                p *= row[z]
            if not p:
                continue
            for r, q in _noisy_max_choices(spec.variant, noisy):
                key = (spec.index_symbol(r),)
                out[key] = out.get(key, Fraction(0)) + p * q
        return out
    if isinstance(spec, AboveThresholdSpec):
        threshold, stream = _split_at_input(inp)
        _check_values((threshold, *stream), 2)
        trow = geometric_row(spec.threshold_noise, threshold)
        for nt, pt in enumerate(trow):
            # walk the queries, splitting on each noisy result
            alive = pt
            for k, v in enumerate(stream):
                qrow = geometric_row(spec.query_noise, v)
                above = sum((q for z, q in enumerate(qrow) if z >= nt), Fraction(0))
                key = (symbols.BOT,) * k + (symbols.TOP,)
                out[key] = out.get(key, Fraction(0)) + alive * above
                alive *= 1 - above
            key = (symbols.BOT,) * len(stream)
            out[key] = out.get(key, Fraction(0)) + alive
        return {k: v for k, v in out.items() if v}
    raise MechanismError(f"unsupported mechanism spec {spec!r}")


def _noisy_max_choices(variant: str, noisy: Sequence[int]) -> list:
    """All (returned index, probability) outcomes of the scan for fixed noisy values."""
    branches = [((-1, 0, 0), Fraction(1))]  # (M, r, c)
    for i, z in enumerate(noisy):
        nxt = []
        for (m, r, c), q in branches:
            if variant == "improved" and m == z:
                c += 1
                nxt.append(((m, i, c), q / c))
                if c > 1:
                    nxt.append(((m, r, c), q * (c - 1) / c))
                continue
            if m < z:
                nxt.append(((z, i, 1), q))
            else:
                nxt.append(((m, r, c), q))
        branches = nxt
    merged: dict = {}
    for (_, r, _), q in branches:
        merged[r] = merged.get(r, Fraction(0)) + q
    return sorted(merged.items())


# vectorised sampling for the statistical tester ----------------------------


def _sample_noise(rng: np.random.Generator, row: Sequence[Fraction], size: int) -> np.ndarray:
    cdf = np.cumsum([float(p) for p in row])
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(size), side="right")


def sample_codes(spec, inp, size: int, rng: np.random.Generator) -> np.ndarray:
    """Sample ``size`` runs; each run is reduced to an integer output code.

    Noisy Max: the 0-based returned position.  Above Threshold: the number of
    ``bot`` outputs before ``top``; ``len(stream) + 1`` encodes an all-``bot`` run.
    """
    if isinstance(spec, NoisyMaxSpec):
        values = tuple(inp)
        _check_values(values, spec.noise.n)
        m = np.full(size, -1)
        r = np.zeros(size, dtype=np.int64)
        c = np.zeros(size, dtype=np.int64)
        for i, v in enumerate(values):
            noisy = _sample_noise(rng, geometric_row(spec.noise, v), size)
            if spec.variant == "improved":
                eq = m == noisy
                c[eq] += 1
                take = eq & (rng.random(size) * np.maximum(c, 1) < 1)
                r[take] = i
            gt = m < noisy
            m[gt] = noisy[gt]
            r[gt] = i
            c[gt] = 1
        return r
    if isinstance(spec, AboveThresholdSpec):
        threshold, stream = _split_at_input(inp)
        _check_values((threshold, *stream), 2)
        nt = _sample_noise(rng, geometric_row(spec.threshold_noise, threshold), size)
        code = np.full(size, len(stream) + 1, dtype=np.int64)
        for k, v in enumerate(stream):
            noisy = _sample_noise(rng, geometric_row(spec.query_noise, v), size)
            hit = (code == len(stream) + 1) & (noisy >= nt)
            code[hit] = k
        return code
    raise MechanismError(f"unsupported mechanism spec {spec!r}")


def decode_output(spec, inp, code: int) -> tuple:
    if isinstance(spec, NoisyMaxSpec):
        return (spec.index_symbol(int(code)),)
    _, stream = _split_at_input(inp)
    if code == len(stream) + 1:
        return (symbols.BOT,) * len(stream)
    return (symbols.BOT,) * int(code) + (symbols.TOP,)


def mechanism_spec_to_json(spec) -> dict:
    if isinstance(spec, NoisyMaxSpec):
        return {
            "mechanism": "noisy_max",
            "variant": spec.variant,
            "n_queries": spec.n_queries,
            "index_base": spec.index_base,
        }
    if isinstance(spec, AboveThresholdSpec):
        return {"mechanism": "above_threshold"}
    if isinstance(spec, GeometricSpec):
        return {"mechanism": "geometric", "alpha": str(spec.alpha), "n": spec.n}
    raise MechanismError(f"unsupported mechanism spec {spec!r}")
