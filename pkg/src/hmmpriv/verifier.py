"""Checking the ratio-bounded (Pufferfish) inequality over observation sequences.

Concrete models are decided by exhaustive depth-first enumeration on an
integer-scaled copy of the forward recursion.  Parametric models go through
the SMT query builder in :mod:`hmmpriv.smt`, with a grid fallback when no
solver binary is available.
"""

from __future__ import annotations

import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_CEILING, ROUND_FLOOR, Decimal, localcontext
from fractions import Fraction
from math import lcm
from typing import Iterable, Mapping, Sequence

from . import symbols
from .algebra import Poly, as_concrete, format_rational, parse_rational
from .hmm import POLICIES, Hmm, InformationState, Param, RatPair, sequence_probability


class VerificationError(ValueError):
    pass


@dataclass(frozen=True)
class VerificationQuery:
    h: Hmm
    pi: InformationState
    tau: InformationState
    c: Fraction
    k: int = 1
    policy: str = "any"
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "c", parse_rational(self.c) if not isinstance(self.c, Fraction) else self.c)
        if self.c < 1:
            raise VerificationError(f"ratio bound c must be >= 1, got {self.c}")
        if self.k < 1:
            raise VerificationError("sequence length k must be >= 1")
        if self.policy not in POLICIES:
            raise VerificationError(f"unknown feasibility policy {self.policy!r}")

    @property
    def concrete(self) -> bool:
        return self.h.concrete and self.pi.is_concrete() and self.tau.is_concrete()

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "pi": self.pi.to_json(),
            "tau": self.tau.to_json(),
            "c": format_rational(self.c),
            "k": self.k,
            "policy": self.policy,
        }


@dataclass
class Counterexample:
    sequence: tuple
    p_pi: Fraction
    p_tau: Fraction
    direction: str  # "pi>c*tau" or "tau>c*pi"
    assignment: dict | None = None

    @property
    def ratio(self) -> str:
        big, small = (self.p_pi, self.p_tau) if self.direction == "pi>c*tau" else (self.p_tau, self.p_pi)
        if small == 0:
            return "infinite"
        return format_rational(big / small)

    def to_json(self) -> dict:
        out = {
            "sequence": list(self.sequence),
            "sequence_unicode": [symbols.pretty(w) for w in self.sequence],
            "p_pi": format_rational(self.p_pi),
            "p_tau": format_rational(self.p_tau),
            "direction": self.direction,
            "ratio": self.ratio,
        }
        if self.assignment is not None:
            out["assignment"] = {k: format_rational(v) for k, v in sorted(self.assignment.items())}
        return out


@dataclass
class Verdict:
    status: str  # holds | violation | unknown
    k: int
    backend: str = "exact"
    counterexample: Counterexample | None = None
    sequences_checked: int = 0
    detail: str = ""

    @property
    def holds(self) -> bool:
        return self.status == "holds"

    def to_json(self) -> dict:
        out = {"verdict": self.status, "k": self.k, "backend": self.backend}
        if self.counterexample is not None:
            out["counterexample"] = self.counterexample.to_json()
        if self.backend == "exact":
            out["sequences_checked"] = self.sequences_checked
        if self.detail:
            out["detail"] = self.detail
        return out


# integer-scaled forward recursion ------------------------------------------------


class _IntModel:
    """Concrete HMM with transition rows scaled by L and emission columns by E.

    After t steps the scaled forward vector equals the exact one times
    ``D * L**t * E**(t+1)`` for a start scaled by ``D``, so comparisons between
    two starts only need their start scales.
    """

    def __init__(self, h: Hmm):
        if not h.concrete:
            raise VerificationError("integer forward recursion needs a concrete model")
        tden = lcm(1, *(Fraction(p).denominator for row in h.chain.rows for _, p in row))
        eden = lcm(1, *(Fraction(p).denominator for row in h.emission_rows for _, p in row))
        self.rows = tuple(tuple((t, int(Fraction(p) * tden)) for t, p in row) for row in h.chain.rows)
        self.columns = tuple({s: int(Fraction(p) * eden) for s, p in col.items()} for col in h.emission_columns)
        self.m = len(h.observations)

    def emit(self, predicted: dict, k: int) -> dict:
        column = self.columns[k]
        return {s: a * column[s] for s, a in predicted.items() if s in column}

    def predict(self, alpha: dict) -> dict:
        out: dict = {}
        rows = self.rows
        for s, a in alpha.items():
            for t, p in rows[s]:
                out[t] = out.get(t, 0) + a * p
        return out


def _int_model(h: Hmm) -> _IntModel:
    cached = h.__dict__.get("_int_model")
    if cached is None:
        cached = _IntModel(h)
        h.__dict__["_int_model"] = cached
    return cached


def _scaled_start(state: InformationState) -> tuple:
    vals = [as_concrete(n) / as_concrete(state.denominator) for n in state.numerators]
    d = lcm(1, *(v.denominator for v in vals))
    return {i: int(v * d) for i, v in enumerate(vals) if v}, d


def _search(h: Hmm, pi: InformationState, tau: InformationState, c: Fraction, ks: Sequence[int], policy: str):
    """Iterative deepening over ``ks`` (ascending); returns ((k, sequence, direction) | None, leaves checked).

    The violation reported is at the smallest k in ``ks`` and is the
    lexicographically first violating sequence of that length.
    """
    model = _int_model(h)
    a0, dpi = _scaled_start(pi)
    b0, dtau = _scaled_start(tau)
    # p_pi > c p_tau  <=>  A * dtau * c.den > c.num * B * dpi
    lhs_pi, rhs_pi = dtau * c.denominator, c.numerator * dpi
    lhs_tau, rhs_tau = dpi * c.denominator, c.numerator * dtau
    need_all = policy == "both"
    obs = h.observations
    m = model.m
    checked = 0

    def children(prefix, pa, pb):
        for w in range(m):
            a = model.emit(pa, w)
            b = model.emit(pb, w)
            if need_all:
                if not a or not b:
                    continue
            elif not a and not b:
                continue
            yield prefix + (obs[w],), a, b

    for k in sorted(set(ks)):
        # explicit stack of generators keeps long horizons off the Python call stack
        frames = [children((), a0, b0)]
        while frames:
            nxt = next(frames[-1], None)
            if nxt is None:
                frames.pop()
                continue
            seq, a, b = nxt
            if len(seq) < k:
                frames.append(children(seq, model.predict(a), model.predict(b)))
                continue
            checked += 1
            sa, sb = sum(a.values()), sum(b.values())
            if sa * lhs_pi > rhs_pi * sb:
                return (k, seq, "pi>c*tau"), checked
            if sb * lhs_tau > rhs_tau * sa:
                return (k, seq, "tau>c*pi"), checked
    return None, checked


def _exact_counterexample(h, pi, tau, seq, direction, assignment=None) -> Counterexample:
    p_pi = _as_fraction(sequence_probability(h, pi, seq))
    p_tau = _as_fraction(sequence_probability(h, tau, seq))
    return Counterexample(tuple(seq), p_pi, p_tau, direction, assignment)


def _as_fraction(v) -> Fraction:
    if isinstance(v, RatPair):
        return as_concrete(v.num) / as_concrete(v.den)
    return as_concrete(v)


def check_pair_exact(q: VerificationQuery) -> Verdict:
    """Exhaustive check of both inequalities over every feasible length-k sequence."""
    if not q.concrete:
        raise VerificationError("model or information states are parametric; use build_smt_query / verify")
    best, checked = _search(q.h, q.pi, q.tau, q.c, [q.k], q.policy)
    if best is None:
        return Verdict("holds", q.k, "exact", None, checked)
    _, seq, direction = best
    return Verdict("violation", q.k, "exact", _exact_counterexample(q.h, q.pi, q.tau, seq, direction), checked)


def sweep_pair_exact(
    h: Hmm, pi: InformationState, tau: InformationState, c, ks: Sequence[int], policy: str = "any"
) -> list:
    """Verdicts for each k in ``ks`` (ascending) up to and including the first violation."""
    ks = sorted(set(ks))
    if not ks:
        return []
    c = parse_rational(c)
    best, checked = _search(h, pi, tau, c, ks, policy)
    if best is None:
        return [Verdict("holds", k, "exact") for k in ks[:-1]] + [Verdict("holds", ks[-1], "exact", None, checked)]
    d, seq, direction = best
    out = [Verdict("holds", k, "exact") for k in ks if k < d]
    out.append(Verdict("violation", d, "exact", _exact_counterexample(h, pi, tau, seq, direction), checked))
    return out


# grounding parametric inputs ---------------------------------------------------------


def ground_model(h: Hmm, assignment: Mapping[str, Fraction]) -> Hmm:
    if h.concrete:
        return h
    transitions = [
        (h.states[i], h.states[j], p.evaluate(assignment) if isinstance(p, Poly) else p)
        for i, row in enumerate(h.chain.rows)
        for j, p in row
    ]
    emissions = [
        (h.states[i], h.observations[k], p.evaluate(assignment) if isinstance(p, Poly) else p)
        for i, row in enumerate(h.emission_rows)
        for k, p in row
    ]
    return Hmm(h.states, h.observations, transitions, emissions)


def ground_state(state: InformationState, assignment: Mapping[str, Fraction]) -> InformationState:
    if state.is_concrete() and state.denominator == 1:
        return state
    return state.evaluate(assignment)


def _free_params(q: VerificationQuery) -> list:
    names = set(q.pi.params()) | set(q.tau.params())
    for row in (*q.h.chain.rows, *q.h.emission_rows):
        for _, p in row:
            if isinstance(p, Poly):
                names |= p.params()
    declared = {p.name: p for p in q.h.params}
    return [declared.get(n) or Param(n) for n in sorted(names)]


def grid_search(q: VerificationQuery, points: int = 3, stop_at_first: bool = True) -> tuple:
    """Exact checks at every grid assignment; returns (first violation verdict or None, violating assignments)."""
    params = _free_params(q)
    grids = [p.grid(points) for p in params]
    first = None
    hits = []
    for combo in itertools.product(*grids):
        assignment = {p.name: v for p, v in zip(params, combo)}
        try:
            pi = ground_state(q.pi, assignment)
            tau = ground_state(q.tau, assignment)
        except ZeroDivisionError:
            continue
        h = ground_model(q.h, assignment)
        v = check_pair_exact(VerificationQuery(h, pi, tau, q.c, q.k, q.policy, q.label))
        if v.status == "violation":
            v.counterexample.assignment = assignment
            v.backend = "grid"
            hits.append(assignment)
            if first is None:
                first = v
                if stop_at_first:
                    break
    return first, hits


def check_pair_parametric(q: VerificationQuery, solver=None) -> Verdict:
    """Both directions through the SMT backend; grid fallback if the solver is unavailable."""
    from . import smt

    solver = solver or smt.SolverConfig()
    unknown_detail = None
    for direction in ("pi>c*tau", "tau>c*pi"):
        ast = build_smt_query(q, direction)
        try:
            res = smt.solve(ast, solver)
        except smt.SmtError as exc:
            unknown_detail = f"solver error: {exc}"
            break
        if res.status == "sat":
            cex = _certify_model(q, ast, res.model, direction)
            if cex is not None:
                return Verdict("violation", q.k, "smt", cex)
            unknown_detail = "solver model did not certify; falling back to grid"
            break
        if res.status == "unsat":
            continue
        unknown_detail = f"{res.status}: {res.detail}" if res.detail else res.status
        break
    else:
        return Verdict("holds", q.k, "smt")
    first, _ = grid_search(q)
    if first is not None:
        first.detail = unknown_detail or ""
        return first
    status = "unknown(backend-unavailable)" if "backend-unavailable" in (unknown_detail or "") else "unknown"
    return Verdict(status, q.k, "smt", None, 0, unknown_detail or "")


def _certify_model(q: VerificationQuery, ast, model: Mapping, direction: str) -> Counterexample | None:
    seq = tuple(model[w] for w in ast.obs_vars)
    assignment = {p: model[p] for p in ast.param_names if p in model}
    if set(assignment) != set(ast.param_names):
        return None
    cert = certify_counterexample(q.h, q.pi, q.tau, q.c, seq, assignment)
    if not cert["valid"]:
        return None
    return Counterexample(seq, cert["p_pi"], cert["p_tau"], cert["direction"], assignment)


def build_smt_query(q: VerificationQuery, direction: str = "pi>c*tau"):
    from .smt import build_query

    return build_query(q, direction)


# certification ------------------------------------------------------------------------


def certify_counterexample(
    h: Hmm,
    pi: InformationState,
    tau: InformationState,
    c,
    seq: Sequence[str],
    assignment: Mapping[str, Fraction] | None = None,
) -> dict:
    """Exact probabilities of ``seq`` from both starts and whether they violate the bound strictly."""
    c = parse_rational(c) if not isinstance(c, Fraction) else c
    assignment = {k: parse_rational(v) for k, v in (assignment or {}).items()}
    if assignment:
        h, pi, tau = ground_model(h, assignment), ground_state(pi, assignment), ground_state(tau, assignment)
    if not (h.concrete and pi.is_concrete() and tau.is_concrete()):
        raise VerificationError("certification needs concrete inputs; pass an assignment")
    seq = tuple(symbols.normalize(w) for w in seq)
    p_pi = _as_fraction(sequence_probability(h, pi, seq))
    p_tau = _as_fraction(sequence_probability(h, tau, seq))
    gap_pi, gap_tau = p_pi - c * p_tau, p_tau - c * p_pi
    direction = "pi>c*tau" if gap_pi >= gap_tau else "tau>c*pi"
    cex = Counterexample(seq, p_pi, p_tau, direction, assignment or None)
    return {
        "valid": max(gap_pi, gap_tau) > 0,
        "p_pi": p_pi,
        "p_tau": p_tau,
        "ratio_direction": direction,
        "direction": direction,
        "ratio": cex.ratio,
        "counterexample": cex,
    }


# epsilon <-> c ------------------------------------------------------------------------

DEFAULT_PRECISION = Fraction(1, 10**6)


def c_bounds(eps, precision=DEFAULT_PRECISION) -> tuple:
    """Rationals (c_lo, c_hi) on the precision grid with c_lo <= e^eps <= c_hi."""
    precision = Fraction(precision)
    with localcontext() as ctx:
        ctx.prec = 60
        value = Decimal(str(eps)).exp() if not isinstance(eps, Fraction) else (
            Decimal(eps.numerator) / Decimal(eps.denominator)
        ).exp()
        steps = value / (Decimal(precision.numerator) / Decimal(precision.denominator))
        lo = int(steps.to_integral_value(rounding=ROUND_FLOOR))
        hi = int(steps.to_integral_value(rounding=ROUND_CEILING))
    return max(Fraction(1), lo * precision), max(Fraction(1), hi * precision)


def c_for_eps(eps, purpose: str, precision=DEFAULT_PRECISION) -> Fraction:
    """Sound rational stand-in for e^eps.

    ``violation``: rounded up, so p > c*q implies p > e^eps*q.
    ``holds``: rounded down, so p <= c*q implies p <= e^eps*q.
    """
    lo, hi = c_bounds(eps, precision)
    if purpose == "violation":
        return hi
    if purpose == "holds":
        return lo
    raise VerificationError(f"unknown purpose {purpose!r}")


def decide_eps(h, pairs, eps, ks, policy="any", precision=DEFAULT_PRECISION) -> tuple:
    """Sound verdict at an irrational bound e^eps: ("violation"|"holds"|"undecided", evidence)."""
    c_hi = c_for_eps(eps, "violation", precision)
    for i, (pi, tau) in enumerate(pairs):
        verdicts = sweep_pair_exact(h, pi, tau, c_hi, ks, policy)
        if verdicts and verdicts[-1].status == "violation":
            return "violation", (i, verdicts[-1])
    c_lo = c_for_eps(eps, "holds", precision)
    if c_lo == c_hi:
        return "holds", None
    for i, (pi, tau) in enumerate(pairs):
        verdicts = sweep_pair_exact(h, pi, tau, c_lo, ks, policy)
        if verdicts and verdicts[-1].status == "violation":
            return "undecided", (i, verdicts[-1])
    return "holds", None


# sweeps -------------------------------------------------------------------------------


@dataclass
class PairReport:
    index: int
    label: str
    verdicts: list = field(default_factory=list)

    @property
    def status(self) -> str:
        if not self.verdicts:
            return "holds"
        last = self.verdicts[-1].status
        return last

    def to_json(self) -> dict:
        return {
            "pair": self.index,
            "label": self.label,
            "verdict": self.status,
            "by_k": [v.to_json() for v in self.verdicts],
        }


@dataclass
class Report:
    c: Fraction
    k_range: list
    policy: str
    pairs: list
    backend: str
    elapsed_ms: int = 0

    @property
    def status(self) -> str:
        statuses = [p.status for p in self.pairs]
        if "violation" in statuses:
            return "violation"
        if any(s.startswith("unknown") for s in statuses):
            return "unknown"
        return "holds"

    def first_violation(self) -> tuple | None:
        for p in self.pairs:
            for v in p.verdicts:
                if v.status == "violation":
                    return p, v
        return None

    def to_json(self) -> dict:
        out = {
            "query": {"c": format_rational(self.c), "k_range": self.k_range, "policy": self.policy},
            "verdict": self.status,
            "backend": self.backend,
            "pairs": [p.to_json() for p in self.pairs],
        }
        first = self.first_violation()
        if first is not None:
            out["counterexample"] = first[1].counterexample.to_json()
            out["counterexample"]["pair"] = first[0].index
            out["counterexample"]["k"] = first[1].k
        out["elapsed_ms"] = self.elapsed_ms
        return out


def _run_pair(args) -> list:
    h, pi, tau, c, ks, policy, backend, solver = args
    concrete = h.concrete and pi.is_concrete() and tau.is_concrete()
    if concrete and backend in ("auto", "exact"):
        return sweep_pair_exact(h, pi, tau, c, ks, policy)
    if backend == "exact":
        raise VerificationError("exact backend requested for parametric inputs")
    out = []
    for k in ks:
        v = check_pair_parametric(VerificationQuery(h, pi, tau, c, k, policy), solver)
        out.append(v)
        if v.status != "holds":
            break
    return out


def verify(
    h: Hmm,
    pairs: Sequence[tuple],
    c,
    k_range: Iterable[int],
    policy: str = "any",
    backend: str = "auto",
    solver=None,
    labels: Sequence[str] | None = None,
    jobs: int = 1,
    stop_on_violation: bool = False,
) -> Report:
    """Sweep every pair over ``k_range``; a pair's sweep ends at its first violation.

    ``stop_on_violation`` skips the remaining pairs once any pair is violated.
    """
    if policy not in POLICIES:
        raise VerificationError(f"unknown feasibility policy {policy!r}")
    if backend not in ("auto", "exact", "smt"):
        raise VerificationError(f"unknown backend {backend!r}")
    c = parse_rational(c) if not isinstance(c, Fraction) else c
    if c < 1:
        raise VerificationError(f"ratio bound c must be >= 1, got {c}")
    ks = sorted(set(int(k) for k in k_range))
    if ks and ks[0] < 1:
        raise VerificationError("sequence lengths must be >= 1")
    labels = list(labels) if labels is not None else [f"pair{i}" for i in range(len(pairs))]
    start = time.perf_counter()
    reports = []
    if ks:
        tasks = [(h, pi, tau, c, ks, policy, backend, solver) for pi, tau in pairs]
        if jobs > 1 and len(tasks) > 1 and not stop_on_violation:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_run_pair, tasks))
        else:
            results = []
            for task in tasks:
                r = _run_pair(task)
                results.append(r)
                if stop_on_violation and r and r[-1].status == "violation":
                    break
        reports = [PairReport(i, labels[i], r) for i, r in enumerate(results)]
    used = "exact" if h.concrete and all(pi.is_concrete() and tau.is_concrete() for pi, tau in pairs) else "smt"
    if backend == "smt":
        used = "smt"
    elapsed = int((time.perf_counter() - start) * 1000)
    return Report(c, ks, policy, reports, used, elapsed)
