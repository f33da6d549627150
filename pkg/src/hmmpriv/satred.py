"""CNF satisfiability as a ratio-gap question on an HMM.

Clause i is walked variable by variable through states for group A (first
start) and a mirror group B (second start).  Entry states of level j emit
``Xj``; truth-value states emit ``Tj`` or ``Fj``.  Once a literal satisfies
the clause the primed (unsatisfied) track jumps to the unprimed one.  Final
states emit top/bot with 4/5 vs 1/5 (A), 1/5 vs 4/5 (B) or 1/2 each (primed).
With c = 4 the gap Pr(w|D1) - 4 Pr(w|D2) over shaped sequences peaks at 0
exactly when the formula is satisfiable.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

from . import symbols
from .hmm import Hmm, InformationState, sequence_probability


class CnfError(ValueError):
    pass


@dataclass(frozen=True)
class Cnf:
    n_vars: int
    clauses: tuple

    def __post_init__(self):
        clauses = tuple(tuple(int(l) for l in c) for c in self.clauses)
        object.__setattr__(self, "clauses", clauses)
        if self.n_vars < 1:
            raise CnfError("formula needs at least one variable")
        for c in clauses:
            if not c:
                raise CnfError("empty clause")
            if len(c) > self.n_vars:
                raise CnfError(f"clause {c} has more literals than variables")
            for lit in c:
                if lit == 0 or abs(lit) > self.n_vars:
                    raise CnfError(f"literal {lit} out of range 1..{self.n_vars}")

    @property
    def m(self) -> int:
        return len(self.clauses)

    def satisfied_by(self, assignment) -> bool:
        return all(any((lit > 0) == bool(assignment[abs(lit) - 1]) for lit in c) for c in self.clauses)

    def to_dimacs(self) -> str:
        lines = [f"p cnf {self.n_vars} {self.m}"]
        lines += [" ".join(str(l) for l in c) + " 0" for c in self.clauses]
        return "\n".join(lines) + "\n"


def parse_dimacs(text: str) -> Cnf:
    n_vars = n_clauses = None
    clauses, current = [], []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("c") or line.startswith("%"):
            continue
        if line.startswith("p"):
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise CnfError(f"bad problem line: {line!r}")
            try:
                n_vars, n_clauses = int(parts[2]), int(parts[3])
            except ValueError:
                raise CnfError(f"bad problem line: {line!r}") from None
            continue
        if n_vars is None:
            raise CnfError("clause before the 'p cnf' line")
        for tok in line.split():
            try:
                lit = int(tok)
            except ValueError:
                raise CnfError(f"bad literal {tok!r}") from None
            if lit == 0:
                clauses.append(current)
                current = []
            else:
                current.append(lit)
    if current:
        clauses.append(current)
    if n_vars is None:
        raise CnfError("missing 'p cnf' line")
    if n_clauses is not None and len(clauses) != n_clauses:
        raise CnfError(f"header declares {n_clauses} clauses, found {len(clauses)}")
    return Cnf(n_vars, tuple(tuple(c) for c in clauses))


def brute_force_sat(f: Cnf) -> bool:
    return any(f.satisfied_by(bits) for bits in itertools.product((False, True), repeat=f.n_vars))


@dataclass
class ReductionInstance:
    h: Hmm
    d1: InformationState
    d2: InformationState
    cnf: Cnf
    c: Fraction = Fraction(4)


def _name(kind: str, group: str, i: int, j: int, primed: bool) -> str:
    # entry states: A_i_j / A'_i_j ; truth states: TA_i_j / TA'_i_j / FA_i_j / FA'_i_j
    prime = "'" if primed else ""
    return f"{kind}{group}{prime}_{i}_{j}"


def build_sat_hmm(f: Cnf) -> ReductionInstance:
    if f.n_vars < 3:
        raise CnfError("the reduction is defined for n >= 3 variables")
    if f.m < 1:
        raise CnfError("the reduction needs at least one clause")
    n, m = f.n_vars, f.m
    half, one = Fraction(1, 2), Fraction(1)
    obs = [f"X{j}" for j in range(1, n + 1)] + [f"T{j}" for j in range(1, n + 1)]
    obs += [f"F{j}" for j in range(1, n + 1)] + [symbols.TOP, symbols.BOT]
    states, trans, emit = [], [], []
    finals = {("A", False): (Fraction(4, 5), Fraction(1, 5)), ("B", False): (Fraction(1, 5), Fraction(4, 5))}
    for group in ("A", "B"):
        for i in range(1, m + 1):
            clause = f.clauses[i - 1]
            for j in range(1, n + 1):
                for primed in (False, True):
                    entry = _name("", group, i, j, primed)
                    t_state = _name("T", group, i, j, primed)
                    f_state = _name("F", group, i, j, primed)
                    states += [entry, t_state, f_state]
                    emit += [(entry, f"X{j}", one), (t_state, f"T{j}", one), (f_state, f"F{j}", one)]
                    trans += [(entry, t_state, half), (entry, f_state, half)]
                    nxt = _name("", group, i, j + 1, primed)
                    t_next = f_next = nxt
                    if primed and j in clause:
                        t_next = _name("", group, i, j + 1, False)
                    if primed and -j in clause:
                        f_next = _name("", group, i, j + 1, False)
                    trans += [(t_state, t_next, one), (f_state, f_next, one)]
            for primed in (False, True):
                final = _name("", group, i, n + 1, primed)
                states.append(final)
                top, bot = finals.get((group, primed), (half, half))
                emit += [(final, symbols.TOP, top), (final, symbols.BOT, bot)]
                trans.append((final, final, one))
    h = Hmm(states, obs, trans, emit)
    w = Fraction(1, m)
    d1 = InformationState.from_mapping(h, {_name("", "A", i, 1, True): w for i in range(1, m + 1)})
    d2 = InformationState.from_mapping(h, {_name("", "B", i, 1, True): w for i in range(1, m + 1)})
    return ReductionInstance(h, d1, d2, f)


def shaped_sequence(bits, last: str) -> tuple:
    seq = []
    for j, b in enumerate(bits, start=1):
        seq += [f"X{j}", f"T{j}" if b else f"F{j}"]
    return tuple(seq) + (last,)


def gap(inst: ReductionInstance, seq) -> Fraction:
    return sequence_probability(inst.h, inst.d1, seq) - inst.c * sequence_probability(inst.h, inst.d2, seq)


def max_gap(inst: ReductionInstance, last_symbols=(symbols.TOP, symbols.BOT)) -> tuple:
    """(max gap, maximizing sequence) over sequences X1 A1 ... Xn An (top|bot)."""
    best, best_seq = None, None
    for bits in itertools.product((True, False), repeat=inst.cnf.n_vars):
        for last in last_symbols:
            seq = shaped_sequence(bits, last)
            g = gap(inst, seq)
            if best is None or g > best:
                best, best_seq = g, seq
    return best, best_seq
