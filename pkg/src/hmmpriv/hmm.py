"""Hidden Markov models over exact values and the forward algorithm.

Transition and emission entries are ``Fraction`` for concrete models or
:class:`~hmmpriv.algebra.Poly` for parametric ones.  Everything is stored
sparsely: a state's transition row and an observation's emission column only
hold non-zero entries.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Mapping, Sequence

from . import symbols
from .algebra import (
    AlgebraError,
    Poly,
    Value,
    format_rational,
    is_concrete,
    parse_rational,
    poly_from_json,
    simplify,
    value_to_json,
)


class ModelError(ValueError):
    pass


def _is_zero(v: Value) -> bool:
    return not v


@dataclass(frozen=True)
class Param:
    name: str
    lo: Fraction = Fraction(0)
    hi: Fraction = Fraction(1)

    def grid(self, points: int = 3) -> list:
        step = (self.hi - self.lo) / (points + 1)
        return [self.lo + step * i for i in range(1, points + 1)]


@dataclass(frozen=True)
class RatPair:
    """A rational function kept as an explicit numerator/denominator pair."""

    num: Value
    den: Value

    def evaluate(self, assignment: Mapping[str, Fraction]) -> Fraction:
        num = self.num.evaluate(assignment) if isinstance(self.num, Poly) else Fraction(self.num)
        den = self.den.evaluate(assignment) if isinstance(self.den, Poly) else Fraction(self.den)
        if den == 0:
            raise ZeroDivisionError("denominator vanishes at this assignment")
        return num / den

    def same_function(self, other: "RatPair | Value") -> bool:
        if not isinstance(other, RatPair):
            other = RatPair(other, Fraction(1))
        return Poly.lift(self.num) * Poly.lift(other.den) == Poly.lift(other.num) * Poly.lift(self.den)

    def __str__(self):
        return f"({self.num}) / ({self.den})"


@dataclass(frozen=True)
class MarkovChain:
    states: tuple
    rows: tuple  # rows[s] = ((t, p(s, t)), ...), zero entries omitted

    def prob(self, s: int, t: int) -> Value:
        for tt, p in self.rows[s]:
            if tt == t:
                return p
        return Fraction(0)


class Hmm:
    """Finite HMM ``((S, p), Obs, o)`` with optional named parameters."""

    def __init__(
        self,
        states: Sequence[str],
        observations: Sequence[str],
        transitions: Sequence[tuple],
        emissions: Sequence[tuple],
        params: Sequence[Param] = (),
        initial_distributions: Mapping[str, "InformationState"] | None = None,
        validate: bool = True,
    ):
        self.states = tuple(states)
        self.observations = tuple(observations)
        if len(set(self.states)) != len(self.states):
            raise ModelError("duplicate state ids")
        if len(set(self.observations)) != len(self.observations):
            raise ModelError("duplicate observation symbols")
        self.state_index = {s: i for i, s in enumerate(self.states)}
        self.obs_index = {w: i for i, w in enumerate(self.observations)}
        self.params = tuple(params)

        rows: list = [dict() for _ in self.states]
        for src, dst, p in transitions:
            i, j = self._state(src), self._state(dst)
            rows[i][j] = simplify(rows[i].get(j, Fraction(0)) + p)
        self.chain = MarkovChain(
            self.states,
            tuple(tuple((j, p) for j, p in sorted(r.items()) if not _is_zero(p)) for r in rows),
        )

        emit_rows: list = [dict() for _ in self.states]
        for s, w, p in emissions:
            i = self._state(s)
            k = self._obs(w)
            emit_rows[i][k] = simplify(emit_rows[i].get(k, Fraction(0)) + p)
        self.emission_rows = tuple(
            tuple((k, p) for k, p in sorted(r.items()) if not _is_zero(p)) for r in emit_rows
        )
        columns: list = [dict() for _ in self.observations]
        for i, row in enumerate(self.emission_rows):
            for k, p in row:
                columns[k][i] = p
        self.emission_columns = tuple(columns)

        self.initial_distributions = dict(initial_distributions or {})
        self.concrete = all(
            is_concrete(p) for row in self.chain.rows for _, p in row
        ) and all(is_concrete(p) for row in self.emission_rows for _, p in row)
        if validate:
            self.validate()

    # lookups --------------------------------------------------------------

    def _state(self, s) -> int:
        if s in self.state_index:
            return self.state_index[s]
        if isinstance(s, int) and not isinstance(s, bool) and 0 <= s < len(self.states):
            return s
        raise ModelError(f"unknown state {s!r}")

    def _obs(self, w) -> int:
        if w in self.obs_index:
            return self.obs_index[w]
        alias = symbols.normalize(w) if isinstance(w, str) else w
        if alias in self.obs_index:
            return self.obs_index[alias]
        raise ModelError(f"unknown observation symbol {w!r}")

    def obs_id(self, w) -> int:
        return self._obs(w)

    def state_id(self, s) -> int:
        return self._state(s)

    def emission(self, s, w) -> Value:
        return self.emission_columns[self._obs(w)].get(self._state(s), Fraction(0))

    def transition(self, s, t) -> Value:
        return self.chain.prob(self._state(s), self._state(t))

    @property
    def n_states(self) -> int:
        return len(self.states)

    def param_names(self) -> list:
        return [p.name for p in self.params]

    # validation -----------------------------------------------------------

    def validate(self) -> None:
        for i, row in enumerate(self.chain.rows):
            total = sum((Poly.lift(p) for _, p in row), Poly())
            if total != Poly.const(1):
                raise ModelError(f"transition row of {self.states[i]!r} sums to {total}, not 1")
        for i, row in enumerate(self.emission_rows):
            total = sum((Poly.lift(p) for _, p in row), Poly())
            if total != Poly.const(1):
                raise ModelError(f"emission row of {self.states[i]!r} sums to {total}, not 1")
        declared = set(self.param_names())
        used = set()
        for row in itertools.chain(self.chain.rows, self.emission_rows):
            for _, p in row:
                if isinstance(p, Poly):
                    used |= p.params()
        missing = used - declared
        if missing:
            raise ModelError(f"undeclared parameters: {sorted(missing)}")
        for assignment in self.grid_assignments():
            for row in itertools.chain(self.chain.rows, self.emission_rows):
                for _, p in row:
                    v = p.evaluate(assignment) if isinstance(p, Poly) else p
                    if not 0 <= v <= 1:
                        raise ModelError(f"entry {p} leaves [0,1] at {assignment}")

    def grid_assignments(self, points: int = 3) -> list:
        if not self.params:
            return [{}]
        grids = [p.grid(points) for p in self.params]
        if len(self.params) > 4:
            # full product gets large; diagonal plus corners is enough as a sanity check
            return [{p.name: g[i] for p, g in zip(self.params, grids)} for i in range(points)]
        return [
            {p.name: v for p, v in zip(self.params, combo)}
            for combo in itertools.product(*grids)
        ]

    # serialization --------------------------------------------------------

    def to_json(self) -> dict:
        transitions = [
            [self.states[i], self.states[j], value_to_json(p)]
            for i, row in enumerate(self.chain.rows)
            for j, p in row
        ]
        emissions = [
            [self.states[i], self.observations[k], value_to_json(p)]
            for i, row in enumerate(self.emission_rows)
            for k, p in row
        ]
        out = {
            "states": list(self.states),
            "observations": list(self.observations),
            "transitions": transitions,
            "emissions": emissions,
            "params": [
                {"name": p.name, "lo": format_rational(p.lo), "hi": format_rational(p.hi)}
                for p in self.params
            ],
        }
        if self.initial_distributions:
            out["initial_distributions"] = {
                name: dist.to_json() for name, dist in self.initial_distributions.items()
            }
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, ensure_ascii=False)

    @classmethod
    def from_json(cls, data: dict) -> "Hmm":
        try:
            states = data["states"]
            observations = [symbols.normalize(w) for w in data["observations"]]
            params = [
                Param(p["name"], parse_rational(p.get("lo", "0")), parse_rational(p.get("hi", "1")))
                for p in data.get("params", [])
            ]
            transitions = [(a, b, poly_from_json(e)) for a, b, e in data.get("transitions", [])]
            emissions = [
                (s, symbols.normalize(w), poly_from_json(e)) for s, w, e in data.get("emissions", [])
            ]
        except (KeyError, TypeError, ValueError, AlgebraError) as exc:
            raise ModelError(f"malformed model JSON: {exc}") from exc
        h = cls(states, observations, transitions, emissions, params)
        for name, raw in data.get("initial_distributions", {}).items():
            h.initial_distributions[name] = InformationState.from_json(h, raw)
        return h

    def __repr__(self):
        return f"Hmm({len(self.states)} states, {len(self.observations)} observations)"


@dataclass(frozen=True)
class InformationState:
    """Distribution over HMM states, stored as numerators over one shared denominator."""

    numerators: tuple
    denominator: Value = Fraction(1)

    @property
    def weights(self) -> list:
        if self.denominator == 1:
            return [n for n in self.numerators]
        return [RatPair(n, self.denominator) for n in self.numerators]

    def is_concrete(self) -> bool:
        return is_concrete(self.denominator) and all(is_concrete(n) for n in self.numerators)

    def params(self) -> set:
        out = set()
        for v in (*self.numerators, self.denominator):
            if isinstance(v, Poly):
                out |= v.params()
        return out

    def support(self) -> list:
        return [i for i, n in enumerate(self.numerators) if not _is_zero(n)]

    @classmethod
    def point_mass(cls, h: Hmm, state) -> "InformationState":
        i = h.state_id(state)
        return cls(tuple(Fraction(int(j == i)) for j in range(h.n_states)))

    @classmethod
    def from_values(cls, h: Hmm, values: Sequence, denominator: Value = Fraction(1)) -> "InformationState":
        if len(values) != h.n_states:
            raise ModelError(f"information state has {len(values)} entries, model has {h.n_states} states")
        vals = tuple(simplify(v if isinstance(v, Poly) else parse_rational(v)) for v in values)
        den = simplify(denominator)
        if is_concrete(den) and all(is_concrete(v) for v in vals):
            d = Fraction(den if not isinstance(den, Poly) else den.constant_value())
            vals = tuple(Fraction(v if not isinstance(v, Poly) else v.constant_value()) / d for v in vals)
            den = Fraction(1)
        return cls(vals, den)

    @classmethod
    def from_mapping(cls, h: Hmm, weights: Mapping) -> "InformationState":
        vals = [Fraction(0)] * h.n_states
        for s, v in weights.items():
            vals[h.state_id(s)] = v
        return cls.from_values(h, vals)

    def check(self, h: Hmm | None = None) -> None:
        """Weights sum to one (as a rational-function identity); concrete weights lie in [0,1]."""
        if h is not None and len(self.numerators) != h.n_states:
            raise ModelError("information state length does not match model")
        total = sum((Poly.lift(n) for n in self.numerators), Poly())
        if total != Poly.lift(self.denominator):
            raise ModelError(f"information state weights sum to ({total})/({self.denominator}), not 1")
        if self.is_concrete():
            for w in self.numerators:
                if not 0 <= w <= 1:
                    raise ModelError(f"weight {w} outside [0,1]")

    def evaluate(self, assignment: Mapping[str, Fraction]) -> "InformationState":
        den = self.denominator.evaluate(assignment) if isinstance(self.denominator, Poly) else self.denominator
        if den == 0:
            raise ZeroDivisionError("conditioning event has probability zero at this assignment")
        vals = tuple(
            (n.evaluate(assignment) if isinstance(n, Poly) else Fraction(n)) / den for n in self.numerators
        )
        return InformationState(vals)

    def to_json(self):
        nums = [value_to_json(n) for n in self.numerators]
        if self.denominator == 1:
            return nums
        return {"numerators": nums, "denominator": value_to_json(self.denominator)}

    @classmethod
    def from_json(cls, h: Hmm, raw) -> "InformationState":
        if isinstance(raw, dict):
            if "numerators" in raw:
                return cls.from_values(
                    h, [poly_from_json(v) for v in raw["numerators"]], poly_from_json(raw.get("denominator", "1"))
                )
            return cls.from_mapping(h, {s: poly_from_json(v) for s, v in raw.items()})
        return cls.from_values(h, [poly_from_json(v) for v in raw])


@dataclass
class ForwardState:
    """Sparse forward vector: alpha[s] = numerator of Pr(w_0..w_t, state_t = s)."""

    alpha: dict
    t: int
    denominator: Value = Fraction(1)

    def total(self) -> Value:
        return sum(self.alpha.values(), Fraction(0))

    def probability(self):
        num = simplify(self.total())
        if self.denominator == 1:
            return num
        return RatPair(num, self.denominator)

    def dense(self, n: int) -> list:
        return [self.alpha.get(i, Fraction(0)) for i in range(n)]

    def is_zero(self) -> bool:
        return not self.alpha


def _emit(h: Hmm, predicted: dict, k: int) -> dict:
    column = h.emission_columns[k]
    out = {}
    if len(predicted) <= len(column):
        for s, a in predicted.items():
            e = column.get(s)
            if e is not None:
                v = a * e
                if v:
                    out[s] = v
    else:
        for s, e in column.items():
            a = predicted.get(s)
            if a is not None:
                v = a * e
                if v:
                    out[s] = v
    return out


def _predict(h: Hmm, alpha: dict) -> dict:
    rows = h.chain.rows
    out: dict = {}
    for s, a in alpha.items():
        for t, p in rows[s]:
            out[t] = out.get(t, 0) + a * p
    return {t: v for t, v in out.items() if v}


def _initial(pi: InformationState) -> dict:
    return {i: n for i, n in enumerate(pi.numerators) if not _is_zero(n)}


def forward_init(h: Hmm, pi: InformationState, w0) -> ForwardState:
    if len(pi.numerators) != h.n_states:
        raise ModelError("information state length does not match model")
    return ForwardState(_emit(h, _initial(pi), h.obs_id(w0)), 0, pi.denominator)


def forward_step(h: Hmm, fs: ForwardState, w) -> ForwardState:
    k = h.obs_id(w)
    return ForwardState(_emit(h, _predict(h, fs.alpha), k), fs.t + 1, fs.denominator)


def sequence_probability(h: Hmm, pi: InformationState, seq: Sequence):
    """Exact Pr(seq | pi, h): a ``Fraction``, a ``Poly``, or a :class:`RatPair`."""
    if not seq:
        raise ModelError("observation sequence must be non-empty")
    fs = forward_init(h, pi, seq[0])
    for w in seq[1:]:
        fs = forward_step(h, fs, w)
    return fs.probability()


def path_sum_probability(h: Hmm, pi: InformationState, seq: Sequence):
    """Brute-force sum over every state path; independent of the forward recursion."""
    ks = [h.obs_id(w) for w in seq]
    n = h.n_states
    total = Fraction(0)
    for path in itertools.product(range(n), repeat=len(seq)):
        term = pi.numerators[path[0]]
        if _is_zero(term):
            continue
        term = term * h.emission_columns[ks[0]].get(path[0], 0)
        for t in range(1, len(seq)):
            if _is_zero(term):
                break
            term = term * h.chain.prob(path[t - 1], path[t]) * h.emission_columns[ks[t]].get(path[t], 0)
        total = total + term
    total = simplify(total)
    if pi.denominator == 1:
        return total
    return RatPair(total, pi.denominator)


POLICIES = ("any", "both")


def walk(h: Hmm, starts: Sequence[InformationState], k: int, policy: str = "any") -> Iterator[tuple]:
    """Depth-first, lexicographic (in observation order) walk over length-k sequences.

    Yields ``(sequence, [ForwardState per start])`` for every sequence whose
    probability is non-zero under at least one start (``any``) or all of
    them (``both``).  Sub-trees whose forward vectors are zero are pruned.
    """
    if k < 1:
        raise ModelError("sequence length must be at least 1")
    if policy not in POLICIES:
        raise ModelError(f"unknown feasibility policy {policy!r}")
    need_all = policy == "both"
    m = len(h.observations)

    def feasible(alphas):
        if need_all:
            return all(alphas)
        return any(alphas)

    def rec(prefix, predicted, depth):
        for w in range(m):
            alphas = [_emit(h, pred, w) for pred in predicted]
            if not feasible(alphas):
                continue
            seq = prefix + (h.observations[w],)
            if depth + 1 == k:
                yield seq, [ForwardState(a, depth, s.denominator) for a, s in zip(alphas, starts)]
            else:
                yield from rec(seq, [_predict(h, a) for a in alphas], depth + 1)

    yield from rec((), [_initial(s) for s in starts], 0)


def enumerate_sequences(
    h: Hmm, pi: InformationState, tau: InformationState, k: int, policy: str = "any"
) -> Iterator[tuple]:
    for seq, _ in walk(h, [pi, tau], k, policy):
        yield seq
