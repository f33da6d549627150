"""Pufferfish scenarios: priors over datasets, secrets, discriminative pairs.

Conditioning a prior on a secret yields the initial information state the
verifier compares.  Differential privacy is the special case where the pairs
are point masses on neighbouring states.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from .algebra import AlgebraError, Poly, Value, is_concrete, parse_rational, poly_from_json, simplify, value_to_json
from .hmm import Hmm, InformationState, Param


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetPrior:
    name: str
    probs: Mapping[str, Value]
    params: tuple = ()

    @property
    def support(self) -> list:
        return [d for d, p in self.probs.items() if p]

    def check(self) -> None:
        total = sum((Poly.lift(p) for p in self.probs.values()), Poly())
        if total != Poly.const(1):
            raise ScenarioError(f"prior {self.name!r} sums to {total}, not 1")
        for assignment in _grid(self.params):
            for d, p in self.probs.items():
                v = p.evaluate(assignment) if isinstance(p, Poly) else p
                if v < 0:
                    raise ScenarioError(f"prior {self.name!r} is negative on {d!r} at {assignment}")


@dataclass(frozen=True)
class Secret:
    name: str
    member_of: frozenset


@dataclass
class PufferfishScenario:
    universe: list
    priors: list
    secrets: list
    pairs: list
    state_of: dict
    params: tuple = ()
    side_conditions: list = field(default_factory=list)

    def secret(self, name: str) -> Secret:
        for s in self.secrets:
            if s.name == name:
                return s
        raise ScenarioError(f"unknown secret {name!r}")

    def check(self, h: Hmm | None = None) -> None:
        names = {s.name for s in self.secrets}
        for a, b in self.pairs:
            if a not in names or b not in names:
                raise ScenarioError(f"pair ({a}, {b}) references an undeclared secret")
        universe = set(self.universe)
        for s in self.secrets:
            extra = set(s.member_of) - universe
            if extra:
                raise ScenarioError(f"secret {s.name!r} mentions datasets outside the universe: {sorted(extra)}")
        for prior in self.priors:
            prior.check()
            for d in prior.support:
                if d not in self.state_of:
                    raise ScenarioError(f"dataset {d!r} has no model state")
                if h is not None:
                    h.state_id(self.state_of[d])

    # json -------------------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "universe": list(self.universe),
            "params": [{"name": p.name, "lo": str(p.lo), "hi": str(p.hi)} for p in self.params],
            "priors": [
                {"name": pr.name, "probs": {d: value_to_json(v) for d, v in pr.probs.items()}}
                for pr in self.priors
            ],
            "secrets": [{"name": s.name, "datasets": sorted(s.member_of)} for s in self.secrets],
            "pairs": [list(p) for p in self.pairs],
            "state_of": dict(self.state_of),
            "side_conditions": [
                {"prior": prior, "secret": secret, "nonzero": value_to_json(den)}
                for prior, secret, den in self.side_conditions
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)

    @classmethod
    def from_json(cls, data: dict) -> "PufferfishScenario":
        try:
            params = tuple(
                Param(p["name"], parse_rational(p.get("lo", "0")), parse_rational(p.get("hi", "1")))
                for p in data.get("params", [])
            )
            priors = [
                DatasetPrior(pr["name"], {d: poly_from_json(v) for d, v in pr["probs"].items()}, params)
                for pr in data["priors"]
            ]
            secrets = [Secret(s["name"], frozenset(s["datasets"])) for s in data["secrets"]]
            sc = cls(
                universe=list(data["universe"]),
                priors=priors,
                secrets=secrets,
                pairs=[tuple(p) for p in data.get("pairs", [])],
                state_of=dict(data["state_of"]),
                params=params,
            )
        except (KeyError, TypeError, ValueError, AlgebraError) as exc:
            raise ScenarioError(f"malformed scenario JSON: {exc}") from exc
        sc.check()
        return sc


def _grid(params: Sequence[Param]) -> list:
    if not params:
        return [{}]
    grids = [p.grid(3) for p in params]
    if len(params) > 4:
        return [{p.name: g[i] for p, g in zip(params, grids)} for i in range(3)]
    return [{p.name: v for p, v in zip(params, combo)} for combo in itertools.product(*grids)]


def _cancel(nums: list, den: Value) -> tuple:
    """Divide out the denominator when it divides every numerator, else cancel the common monomial."""
    if not isinstance(den, Poly) or den.is_constant():
        d = den.constant_value() if isinstance(den, Poly) else Fraction(den)
        return [simplify(Poly.lift(n) * (1 / d)) for n in nums], Fraction(1)
    quotients = [Poly.lift(n).divide_exact(den) for n in nums]
    if all(q is not None for q in quotients):
        return [simplify(q) for q in quotients], Fraction(1)
    polys = [Poly.lift(n) for n in nums] + [den]
    exps: dict | None = None
    for p in polys:
        if p.is_zero():
            continue
        content = dict(p.monomial_content())
        exps = content if exps is None else {k: min(e, content[k]) for k, e in exps.items() if k in content}
    mono = tuple(sorted((exps or {}).items()))
    if mono:
        polys = [p.divide_monomial(mono) for p in polys]
    return [simplify(p) for p in polys[:-1]], simplify(polys[-1])


def condition_prior(theta: DatasetPrior, secret: Secret, state_of: Mapping[str, str], h: Hmm) -> InformationState:
    """Pr(state | secret, theta) as an information state over the model's states."""
    nums: list = [Fraction(0)] * h.n_states
    den: Value = Fraction(0)
    for d, p in theta.probs.items():
        if d not in secret.member_of or not p:
            continue
        if d not in state_of:
            raise ScenarioError(f"dataset {d!r} has no model state")
        i = h.state_id(state_of[d])
        nums[i] = nums[i] + p
        den = den + p
    den = simplify(den)
    if is_concrete(den) and (den.constant_value() if isinstance(den, Poly) else den) == 0:
        raise ScenarioError(
            f"undefined conditional: secret {secret.name!r} has probability 0 under prior {theta.name!r}"
        )
    nums, den = _cancel(nums, den)
    return InformationState(tuple(nums), den)


def prior_state(theta: DatasetPrior, state_of: Mapping[str, str], h: Hmm) -> InformationState:
    """The unconditioned prior pushed through ``state_of``."""
    return condition_prior(theta, Secret("*", frozenset(theta.probs)), state_of, h)


def dp_neighbor_pairs(h: Hmm, adjacency: Sequence[tuple], both_directions: bool = True) -> list:
    """Point-mass pairs for adjacent states; each unordered pair is emitted in both orders."""
    seen = set()
    out = []
    for a, b in adjacency:
        h.state_id(a), h.state_id(b)
        orders = [(a, b), (b, a)] if both_directions else [(a, b)]
        for x, y in orders:
            if (x, y) in seen:
                continue
            seen.add((x, y))
            out.append((InformationState.point_mass(h, x), InformationState.point_mass(h, y)))
    return out


def counting_adjacency(n: int) -> list:
    """Neighbouring counting-query results |i - j| <= 1 over {0..n}."""
    return [(str(i), str(j)) for i in range(n + 1) for j in range(n + 1) if abs(i - j) <= 1]


def entry_swap_adjacency(n_attributes: int, n_individuals: int = 2) -> set:
    """Pairs of per-attribute count tuples induced by changing one individual's entry.

    Datasets are ``n_individuals`` entries from ``{0,1}^n_attributes``; each
    count tuple sums the entries attribute-wise.
    """
    entries = list(itertools.product((0, 1), repeat=n_attributes))
    pairs = set()
    for dataset in itertools.product(entries, repeat=n_individuals):
        counts = tuple(sum(col) for col in zip(*dataset))
        for pos in range(n_individuals):
            for new in entries:
                changed = list(dataset)
                changed[pos] = new
                pairs.add((counts, tuple(sum(col) for col in zip(*changed))))
    return pairs


def scenario_queries(sc: PufferfishScenario, h: Hmm) -> list:
    """(condition(theta, s_i), condition(theta, s_j)) for every prior and ordered pair.

    Parametric secret probabilities Pr(s | theta) are recorded in
    ``sc.side_conditions`` as ``(prior, secret, probability)``: the query is only
    meaningful where they are non-zero.
    """
    out = []
    for theta in sc.priors:
        states = {}
        for a, b in sc.pairs:
            for name in (a, b):
                if name not in states:
                    secret = sc.secret(name)
                    states[name] = condition_prior(theta, secret, sc.state_of, h)
                    mass = simplify(sum((Poly.lift(p) for d, p in theta.probs.items() if d in secret.member_of), Poly()))
                    cond = (theta.name, name, mass)
                    if isinstance(mass, Poly) and cond not in sc.side_conditions:
                        sc.side_conditions.append(cond)
            out.append((states[a], states[b]))
    return out


def scenario_query_labels(sc: PufferfishScenario) -> list:
    return [f"{theta.name}:{a}|{b}" for theta in sc.priors for a, b in sc.pairs]


# ready-made scenarios -------------------------------------------------------


def contagious_pair_scenario() -> PufferfishScenario:
    """Two family members with a contagious disease; John is the first entry."""
    p = Poly.param("p")
    probs = {"00": 1 - p, "01": Fraction(0), "10": Fraction(0), "11": p}
    params = (Param("p"),)
    return PufferfishScenario(
        universe=["00", "01", "10", "11"],
        priors=[DatasetPrior("theta_p", probs, params)],
        secrets=[Secret("c", frozenset({"10", "11"})), Secret("nc", frozenset({"00", "01"}))],
        pairs=[("nc", "c"), ("c", "nc")],
        state_of={"00": "0", "01": "1", "10": "1", "11": "2"},
        params=params,
    )


def independent_count_scenario() -> PufferfishScenario:
    """Independent disease with probability p, datasets identified with the count of cases.

    ``absent`` conditions on nothing (John's record not present); ``present``
    conditions on at least one case.
    """
    p = Poly.param("p")
    probs = {"0": (1 - p) ** 2, "1": 2 * p * (1 - p), "2": p**2}
    params = (Param("p"),)
    return PufferfishScenario(
        universe=["0", "1", "2"],
        priors=[DatasetPrior("independent", probs, params)],
        secrets=[Secret("absent", frozenset({"0", "1", "2"})), Secret("present", frozenset({"1", "2"}))],
        pairs=[("absent", "present"), ("present", "absent")],
        state_of={"0": "0", "1": "1", "2": "2"},
        params=params,
    )


def _binomial2(q: Poly) -> list:
    return [(1 - q) ** 2, 2 * q * (1 - q), q**2]


def noisy_max_disease_scenario(contagious: bool) -> PufferfishScenario:
    """Three diseases A, B, C over two family members including John; the secret is John's A status.

    B and C are independent per person.  With ``contagious`` both members share
    A, so the A count is 0 or 2; otherwise A is independent too and the secret
    is read at the count level (no A case vs at least one A case).
    """
    pa, pb, pc = (Poly.param(n) for n in ("pA", "pB", "pC"))
    params = tuple(Param(n) for n in ("pA", "pB", "pC"))
    dist_a = [1 - pa, Fraction(0), pa] if contagious else _binomial2(pa)
    dist_b, dist_c = _binomial2(pb), _binomial2(pc)
    probs = {}
    for a, b, c in itertools.product(range(3), repeat=3):
        probs[f"{a}{b}{c}"] = dist_a[a] * dist_b[b] * dist_c[c]
    universe = list(probs)
    if contagious:
        no_a = {d for d in universe if d[0] == "0"}
        has_a = {d for d in universe if d[0] == "2"}
    else:
        no_a = {d for d in universe if d[0] in "01"}
        has_a = {d for d in universe if d[0] in "12"}
    return PufferfishScenario(
        universe=universe,
        priors=[DatasetPrior("contagious_A" if contagious else "independent", probs, params)],
        secrets=[Secret("no_A", frozenset(no_a)), Secret("has_A", frozenset(has_a))],
        pairs=[("no_A", "has_A"), ("has_A", "no_A")],
        state_of={d: d for d in universe},
        params=params,
    )
