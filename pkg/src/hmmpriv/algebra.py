"""Exact rationals and multivariate polynomials over named real parameters.

Rationals are :class:`fractions.Fraction`; polynomials are sparse maps from
monomials to rational coefficients.  Nothing in here ever touches a float.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Mapping, Union

Rational = Fraction

# A monomial is a sorted tuple of (param name, exponent > 0); () is the constant.
Monomial = tuple

Scalar = Union[int, Fraction]


class AlgebraError(ValueError):
    pass


def parse_rational(text: Union[str, int, Fraction]) -> Fraction:
    """Parse ``"2/3"``, ``"-1/6"``, ``"1"`` or ``"0.5"`` into an exact rational."""
    if isinstance(text, Fraction):
        return text
    if isinstance(text, int) and not isinstance(text, bool):
        return Fraction(text)
    if not isinstance(text, str):
        raise AlgebraError(f"not a rational literal: {text!r}")
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise AlgebraError(f"not a rational literal: {text!r}") from exc


def format_rational(q: Scalar) -> str:
    q = Fraction(q)
    if q.denominator == 1:
        return str(q.numerator)
    return f"{q.numerator}/{q.denominator}"


def _mono_mul(a: Monomial, b: Monomial) -> Monomial:
    if not a:
        return b
    if not b:
        return a
    exps = dict(a)
    for name, e in b:
        exps[name] = exps.get(name, 0) + e
    return tuple(sorted(exps.items()))


class Poly:
    """Multivariate polynomial with rational coefficients.

    Immutable and hashable.  Arithmetic mixes freely with ``int`` and
    ``Fraction`` operands.
    """

    __slots__ = ("_terms", "_hash")

    def __init__(self, terms: Mapping[Monomial, Scalar] | None = None):
        clean = {}
        for mono, coef in (terms or {}).items():
            coef = Fraction(coef)
            if coef:
                clean[tuple(sorted(mono))] = coef
        self._terms = clean
        self._hash = None

    # construction ---------------------------------------------------------

    @classmethod
    def const(cls, value: Scalar) -> "Poly":
        return cls({(): value})

    @classmethod
    def param(cls, name: str) -> "Poly":
        return cls({((name, 1),): 1})

    @staticmethod
    def lift(value: "Scalar | Poly") -> "Poly":
        if isinstance(value, Poly):
            return value
        return Poly.const(value)

    # inspection -----------------------------------------------------------

    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def params(self) -> set:
        return {name for mono in self._terms for name, _ in mono}

    def is_zero(self) -> bool:
        return not self._terms

    def is_constant(self) -> bool:
        return all(mono == () for mono in self._terms)

    def constant_value(self) -> Fraction:
        if not self.is_constant():
            raise AlgebraError(f"polynomial {self} is not constant")
        return self._terms.get((), Fraction(0))

    def degree(self) -> int:
        return max((sum(e for _, e in mono) for mono in self._terms), default=0)

    # ring operations ------------------------------------------------------

    def __add__(self, other):
        if not isinstance(other, (Poly, int, Fraction)):
            return NotImplemented
        other = Poly.lift(other)
        out = dict(self._terms)
        for mono, coef in other._terms.items():
            out[mono] = out.get(mono, 0) + coef
        return Poly(out)

    __radd__ = __add__

    def __neg__(self):
        return Poly({m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        if not isinstance(other, (Poly, int, Fraction)):
            return NotImplemented
        return self + (-Poly.lift(other))

    def __rsub__(self, other):
        return Poly.lift(other) - self

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            return Poly({m: c * other for m, c in self._terms.items()})
        if not isinstance(other, Poly):
            return NotImplemented
        out: dict = {}
        for ma, ca in self._terms.items():
            for mb, cb in other._terms.items():
                mono = _mono_mul(ma, mb)
                out[mono] = out.get(mono, 0) + ca * cb
        return Poly(out)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        if not isinstance(n, int) or n < 0:
            raise AlgebraError("polynomial powers must be non-negative integers")
        result = Poly.const(1)
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    def __eq__(self, other):
        if isinstance(other, (int, Fraction)):
            other = Poly.const(other)
        if not isinstance(other, Poly):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self._terms.items()))
        return self._hash

    def __bool__(self):
        return bool(self._terms)

    # evaluation -----------------------------------------------------------

    def evaluate(self, assignment: Mapping[str, Scalar]) -> Fraction:
        total = Fraction(0)
        for mono, coef in self._terms.items():
            term = coef
            for name, e in mono:
                if name not in assignment:
                    raise AlgebraError(f"missing value for parameter {name!r}")
                term *= Fraction(assignment[name]) ** e
            total += term
        return total

    def substitute(self, assignment: Mapping[str, Scalar]) -> "Poly":
        """Partially evaluate: replace the assigned parameters, keep the rest."""
        out: dict = {}
        for mono, coef in self._terms.items():
            rest = []
            for name, e in mono:
                if name in assignment:
                    coef = coef * Fraction(assignment[name]) ** e
                else:
                    rest.append((name, e))
            key = tuple(rest)
            out[key] = out.get(key, 0) + coef
        return Poly(out)

    def monomial_content(self) -> Monomial:
        """Largest monomial dividing every term."""
        if not self._terms:
            return ()
        monos = list(self._terms)
        common = dict(monos[0])
        for mono in monos[1:]:
            exps = dict(mono)
            common = {n: min(e, exps[n]) for n, e in common.items() if n in exps}
        return tuple(sorted((n, e) for n, e in common.items() if e > 0))

    def divide_monomial(self, mono: Monomial) -> "Poly":
        out = {}
        div = dict(mono)
        for m, c in self._terms.items():
            exps = dict(m)
            for n, e in div.items():
                if exps.get(n, 0) < e:
                    raise AlgebraError(f"{self} is not divisible by {mono}")
                exps[n] -= e
            out[tuple(sorted((n, e) for n, e in exps.items() if e))] = c
        return Poly(out)

    def divide_exact(self, other: "Poly") -> "Poly | None":
        """Quotient q with self == q * other, or None when other does not divide self."""
        other = Poly.lift(other)
        if other.is_zero():
            raise AlgebraError("division by the zero polynomial")
        names = sorted(self.params() | other.params())

        def key(mono):
            exps = dict(mono)
            return tuple(exps.get(n, 0) for n in names)

        lead = max(other._terms, key=key)
        lead_coef = other._terms[lead]
        rem, quot = self, Poly()
        while not rem.is_zero():
            mono = max(rem._terms, key=key)
            exps = dict(mono)
            for n, e in lead:
                if exps.get(n, 0) < e:
                    return None
                exps[n] -= e
            term = Poly({tuple(sorted((n, e) for n, e in exps.items() if e)): rem._terms[mono] / lead_coef})
            quot = quot + term
            rem = rem - term * other
        return quot

    # rendering ------------------------------------------------------------

    def _sorted_terms(self):
        return sorted(self._terms.items(), key=lambda mc: (-sum(e for _, e in mc[0]), mc[0]))

    def __repr__(self):
        return f"Poly({self})"

    def __str__(self):
        if not self._terms:
            return "0"
        parts = []
        for mono, coef in self._sorted_terms():
            factors = [n if e == 1 else f"{n}^{e}" for n, e in mono]
            if not factors:
                parts.append(format_rational(coef))
            elif coef == 1:
                parts.append("*".join(factors))
            elif coef == -1:
                parts.append("-" + "*".join(factors))
            else:
                parts.append(format_rational(coef) + "*" + "*".join(factors))
        return " + ".join(parts).replace("+ -", "- ")

    def to_json(self):
        """Expression tree with node kinds const/param/add/mul/sub."""
        if self.is_constant():
            return {"const": format_rational(self.constant_value())}
        terms = []
        for mono, coef in self._sorted_terms():
            factors = [] if coef == 1 and mono else [{"const": format_rational(coef)}]
            for name, e in mono:
                factors.extend([{"param": name}] * e)
            terms.append(factors[0] if len(factors) == 1 else {"mul": factors})
        return terms[0] if len(terms) == 1 else {"add": terms}


Value = Union[Fraction, Poly]


def poly_from_json(node) -> Value:
    """Decode an expression: a rational string/int or a const/param/add/mul/sub tree.

    Constant expressions come back as ``Fraction``; anything mentioning a
    parameter comes back as :class:`Poly`.
    """
    value = _decode(node)
    if isinstance(value, Poly) and value.is_constant():
        return value.constant_value()
    return value


def _decode(node) -> Value:
    if isinstance(node, (str, int)) and not isinstance(node, bool):
        return parse_rational(node)
    if not isinstance(node, dict) or len(node) != 1:
        raise AlgebraError(f"malformed expression node: {node!r}")
    (kind, arg), = node.items()
    if kind == "const":
        return parse_rational(arg)
    if kind == "param":
        if not isinstance(arg, str) or not arg:
            raise AlgebraError(f"malformed parameter name: {arg!r}")
        return Poly.param(arg)
    if kind in ("add", "mul"):
        if not isinstance(arg, list) or not arg:
            raise AlgebraError(f"{kind} needs a non-empty argument list")
        acc = _decode(arg[0])
        for child in arg[1:]:
            acc = acc + _decode(child) if kind == "add" else acc * _decode(child)
        return acc
    if kind == "sub":
        if not isinstance(arg, list) or len(arg) != 2:
            raise AlgebraError("sub needs exactly two arguments")
        return _decode(arg[0]) - _decode(arg[1])
    raise AlgebraError(f"unknown expression kind {kind!r}")


def value_to_json(value: Value):
    if isinstance(value, Poly):
        if value.is_constant():
            return format_rational(value.constant_value())
        return value.to_json()
    return format_rational(value)


def poly_eval(p: Value, assignment: Mapping[str, Scalar]) -> Fraction:
    if isinstance(p, Poly):
        return p.evaluate(assignment)
    return Fraction(p)


def poly_arith(a: Value, b: Value, op: str) -> Poly:
    a, b = Poly.lift(a), Poly.lift(b)
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    raise AlgebraError(f"unknown operation {op!r}")


def is_concrete(value: Value) -> bool:
    return not isinstance(value, Poly) or value.is_constant()


def as_concrete(value: Value) -> Fraction:
    if isinstance(value, Poly):
        return value.constant_value()
    return Fraction(value)


def simplify(value: Value) -> Value:
    """Collapse constant polynomials to plain rationals."""
    if isinstance(value, Poly) and value.is_constant():
        return value.constant_value()
    return value


def params_of(values: Iterable[Value]) -> set:
    out: set = set()
    for v in values:
        if isinstance(v, Poly):
            out |= v.params()
    return out
