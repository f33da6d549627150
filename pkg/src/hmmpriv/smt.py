"""SMT-LIB 2 encoding of the forward recursion and an external-solver driver.

The query mirrors the classic construction: symbolic observation variables
``w_0..w_{k-1}``, forward vectors built with Select (an if-then-else chain over
the observation alphabet), Dot and Sum, and a final strict Gt.  Forward entries
are bound to auxiliary real constants so script size stays linear in ``k``.
"""

from __future__ import annotations

import os
import shlex
import shutil
import subprocess
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from .algebra import Poly, format_rational
from .hmm import Hmm, InformationState

# Expressions are plain tuples:
#   ("num", Fraction) ("var", name) ("add", [e..]) ("mul", [e..])
#   ("select", w, [(obs index, coefficient expr)..], body)   -> ite chain of coefficient * body
#   ("dot", [(coef expr, var name)..]) ("sum", [var names]) ("gt", a, b) ("ge", a, b) ("le", a, b)
#   ("eq", a, b) ("or", [e..]) ("and", [e..])


class SmtError(RuntimeError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


@dataclass
class QueryAst:
    obs_vars: list
    obs_symbols: tuple
    param_names: list
    param_bounds: dict
    definitions: list  # (aux name, expr)
    constraints: list  # domain and side conditions
    goal: tuple
    direction: str = "pi>c*tau"
    nonlinear: bool = False

    @property
    def logic(self) -> str:
        return "QF_NRA" if self.nonlinear else "QF_LRA"


def _value(v) -> tuple:
    if isinstance(v, Poly):
        if v.is_constant():
            return ("num", v.constant_value())
        terms = []
        for mono, coef in sorted(v.terms.items()):
            factors = [("num", coef)] if coef != 1 or not mono else []
            for name, e in mono:
                factors.extend([("var", name)] * e)
            terms.append(factors[0] if len(factors) == 1 else ("mul", factors))
        return terms[0] if len(terms) == 1 else ("add", terms)
    return ("num", Fraction(v))


def _start(state: InformationState):
    return [_value(n) for n in state.numerators], _value(state.denominator)


def _forward(h: Hmm, start_vals: list, prefix: str, obs_vars: list, defs: list) -> list:
    """Alg.-style forward vectors; returns the aux names of the final vector."""
    n = h.n_states
    alpha = {}
    for s in range(n):
        if start_vals[s] == ("num", 0):
            continue
        column = [(k, _value(p)) for k, p in h.emission_rows[s]]
        if not column:
            continue
        name = f"{prefix}_0_{s}"
        defs.append((name, ("select", obs_vars[0], column, start_vals[s])))
        alpha[s] = name
    # incoming[t] = [(p(s,t), s)]
    incoming: dict = {}
    for s, row in enumerate(h.chain.rows):
        for t, p in row:
            incoming.setdefault(t, []).append((s, p))
    for step in range(1, len(obs_vars)):
        nxt = {}
        for t in range(n):
            terms = [(_value(p), alpha[s]) for s, p in incoming.get(t, []) if s in alpha]
            column = [(k, _value(p)) for k, p in h.emission_rows[t]]
            if not terms or not column:
                continue
            name = f"{prefix}_{step}_{t}"
            defs.append((name, ("select", obs_vars[step], column, ("dot", terms))))
            nxt[t] = name
        alpha = nxt
    return [alpha[s] for s in sorted(alpha)]


def build_query(q, direction: str = "pi>c*tau") -> QueryAst:
    """SMT query satisfiable iff some length-k sequence violates the bound in ``direction``."""
    h = q.h
    m = len(h.observations)
    obs_vars = [f"w_{t}" for t in range(q.k)]
    defs: list = []
    pi_vals, pi_den = _start(q.pi)
    tau_vals, tau_den = _start(q.tau)
    a_final = _forward(h, pi_vals, "a", obs_vars, defs)
    b_final = _forward(h, tau_vals, "b", obs_vars, defs)
    sum_a, sum_b = ("sum", a_final), ("sum", b_final)

    constraints = [("or", [("eq", ("var", w), ("num", Fraction(i))) for i in range(m)]) for w in obs_vars]
    params = sorted(
        set(q.pi.params()) | set(q.tau.params()) | {n for row in (*h.chain.rows, *h.emission_rows) for _, p in row if isinstance(p, Poly) for n in p.params()}
    )
    declared = {p.name: p for p in h.params}
    bounds = {}
    for name in params:
        lo, hi = (declared[name].lo, declared[name].hi) if name in declared else (Fraction(0), Fraction(1))
        bounds[name] = (lo, hi)
        constraints.append(("ge", ("var", name), ("num", lo)))
        constraints.append(("le", ("var", name), ("num", hi)))
    for den in (pi_den, tau_den):
        if den[0] != "num":
            constraints.append(("gt", den, ("num", Fraction(0))))
    if q.policy == "both":
        constraints.append(("gt", sum_a, ("num", Fraction(0))))
        constraints.append(("gt", sum_b, ("num", Fraction(0))))

    c = ("num", q.c)
    # Pr_pi = sum_a / den_pi, Pr_tau = sum_b / den_tau, both denominators positive
    if direction == "pi>c*tau":
        goal = ("gt", ("mul", [tau_den, sum_a]), ("mul", [c, pi_den, sum_b]))
    elif direction == "tau>c*pi":
        goal = ("gt", ("mul", [pi_den, sum_b]), ("mul", [c, tau_den, sum_a]))
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return QueryAst(obs_vars, h.observations, params, bounds, defs, constraints, goal, direction, bool(params))


# rendering -----------------------------------------------------------------------


def _num(q: Fraction) -> str:
    q = Fraction(q)
    if q < 0:
        return f"(- {_num(-q)})"
    if q.denominator == 1:
        return f"{q.numerator}.0"
    return f"(/ {q.numerator}.0 {q.denominator}.0)"


def render(e) -> str:
    kind = e[0]
    if kind == "num":
        return _num(e[1])
    if kind == "var":
        return e[1]
    if kind in ("add", "mul"):
        args = [render(x) for x in e[1]]
        if len(args) == 1:
            return args[0]
        op = "+" if kind == "add" else "*"
        return f"({op} {' '.join(args)})"
    if kind == "select":
        _, w, column, body = e
        body_s = render(body)
        out = "0.0"
        for k, coef in reversed(column):
            term = body_s if coef == ("num", 1) else f"(* {render(coef)} {body_s})"
            out = f"(ite (= {w} {_num(Fraction(k))}) {term} {out})"
        return out
    if kind == "dot":
        parts = [name if coef == ("num", 1) else f"(* {render(coef)} {name})" for coef, name in e[1]]
        return parts[0] if len(parts) == 1 else f"(+ {' '.join(parts)})"
    if kind == "sum":
        if not e[1]:
            return "0.0"
        return e[1][0] if len(e[1]) == 1 else f"(+ {' '.join(e[1])})"
    if kind in ("gt", "ge", "le", "eq"):
        op = {"gt": ">", "ge": ">=", "le": "<=", "eq": "="}[kind]
        return f"({op} {render(e[1])} {render(e[2])})"
    if kind in ("or", "and"):
        return f"({kind} {' '.join(render(x) for x in e[1])})"
    raise ValueError(f"unknown expression node {kind!r}")


def emit_script(ast: QueryAst) -> str:
    lines = [f"(set-logic {ast.logic})", "(set-option :produce-models true)"]
    for w in ast.obs_vars:
        lines.append(f"(declare-const {w} Real)")
    for p in ast.param_names:
        lines.append(f"(declare-const {p} Real)")
    for name, _ in ast.definitions:
        lines.append(f"(declare-const {name} Real)")
    for c in ast.constraints:
        lines.append(f"(assert {render(c)})")
    for name, expr in ast.definitions:
        lines.append(f"(assert (= {name} {render(expr)}))")
    lines.append(f"(assert {render(ast.goal)})")
    lines.append("(check-sat)")
    get = ast.obs_vars + ast.param_names
    lines.append(f"(get-value ({' '.join(get)}))" if get else "(get-model)")
    return "\n".join(lines) + "\n"


# solver process ------------------------------------------------------------------


def default_solver_command() -> str:
    found = shutil.which("z3")
    return f"{found} -in -smt2" if found else "z3 -in -smt2"


@dataclass
class SolverConfig:
    command: str = field(default_factory=default_solver_command)
    timeout: float = 1200.0

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("solver timeout must be positive")


@dataclass
class SolverResult:
    status: str  # sat | unsat | unknown | timeout | unknown(backend-unavailable)
    model: dict | None = None
    raw: str = ""
    detail: str = ""


def run_solver(script: str, cfg: SolverConfig | None = None, obs_symbols: tuple | None = None) -> SolverResult:
    cfg = cfg or SolverConfig()
    argv = shlex.split(cfg.command)
    try:
        proc = subprocess.run(
            argv, input=script, capture_output=True, text=True, timeout=cfg.timeout, env=os.environ.copy()
        )
    except FileNotFoundError as exc:
        return SolverResult("unknown(backend-unavailable)", detail=f"backend-unavailable: {exc}")
    except PermissionError as exc:
        return SolverResult("unknown(backend-unavailable)", detail=f"backend-unavailable: {exc}")
    except subprocess.TimeoutExpired:
        return SolverResult("timeout", detail=f"no answer within {cfg.timeout}s")
    out = proc.stdout.strip()
    first = out.split("\n", 1)[0].strip() if out else ""
    if first == "unsat":
        return SolverResult("unsat", raw=out)
    if first == "unknown":
        return SolverResult("unknown", raw=out, detail="solver answered unknown")
    if first == "sat":
        rest = out.split("\n", 1)[1] if "\n" in out else ""
        return SolverResult("sat", parse_model(rest, obs_symbols), raw=out)
    raise SmtError(f"unparseable solver output (exit {proc.returncode}): {proc.stderr.strip()[:200]}", out)


def solve(ast: QueryAst, cfg: SolverConfig | None = None) -> SolverResult:
    res = run_solver(emit_script(ast), cfg)
    if res.status == "sat" and res.model is not None:
        res.model = {
            k: (ast.obs_symbols[int(v)] if k in ast.obs_vars else v) for k, v in res.model.items()
        }
    return res


# model parsing ---------------------------------------------------------------------


def _tokens(text: str) -> list:
    return text.replace("(", " ( ").replace(")", " ) ").split()


def _sexprs(text: str) -> list:
    toks = _tokens(text)
    pos = 0

    def read():
        nonlocal pos
        tok = toks[pos]
        pos += 1
        if tok == "(":
            lst = []
            while pos < len(toks) and toks[pos] != ")":
                lst.append(read())
            if pos >= len(toks):
                raise SmtError("unbalanced parentheses in model", text)
            pos += 1
            return lst
        if tok == ")":
            raise SmtError("unexpected ')' in model", text)
        return tok

    out = []
    while pos < len(toks):
        out.append(read())
    return out


def _eval(e, text: str) -> Fraction:
    if isinstance(e, str):
        try:
            return Fraction(e)
        except ValueError:
            raise SmtError(f"unsupported model form: {e}", text) from None
    if not e:
        raise SmtError("empty expression in model", text)
    head, args = e[0], [_eval(a, text) for a in e[1:]] if e[0] not in ("root-obj", "_") else None
    if args is None:
        raise SmtError("unsupported model form: irrational algebraic value", text)
    if head == "-":
        return -args[0] if len(args) == 1 else args[0] - sum(args[1:])
    if head == "+":
        return sum(args, Fraction(0))
    if head == "*":
        out = Fraction(1)
        for a in args:
            out *= a
        return out
    if head == "/":
        out = args[0]
        for a in args[1:]:
            out /= a
        return out
    raise SmtError(f"unsupported model form: {head}", text)


def parse_model(text: str, obs_symbols: tuple | None = None, obs_prefix: str = "w_") -> dict:
    """Parse ``(get-value ...)`` or ``(get-model)`` output into exact values.

    Observation variables (``w_<t>``) become observation symbols when
    ``obs_symbols`` is given.
    """
    model: dict = {}
    try:
        exprs = _sexprs(text)
    except IndexError:
        raise SmtError("malformed model text", text) from None
    for top in exprs:
        if isinstance(top, str):
            continue
        items = top[1:] if top and top[0] == "model" else top
        for item in items:
            if isinstance(item, list) and item and item[0] == "define-fun":
                if len(item) != 5:
                    raise SmtError("malformed define-fun in model", text)
                name, value = item[1], item[4]
            elif isinstance(item, list) and len(item) == 2 and isinstance(item[0], str):
                name, value = item
            else:
                raise SmtError(f"malformed model entry: {item}", text)
            model[name] = _eval(value, text)
    if obs_symbols is not None:
        for name in list(model):
            if name.startswith(obs_prefix):
                v = model[name]
                if v.denominator != 1 or not 0 <= v < len(obs_symbols):
                    raise SmtError(f"observation variable {name} out of range: {v}", text)
                model[name] = obs_symbols[int(v)]
    return model


def model_assignment(ast: QueryAst, model: Mapping) -> tuple:
    """Split a parsed model into (observation sequence, parameter assignment)."""
    seq = tuple(model[w] if isinstance(model[w], str) else ast.obs_symbols[int(model[w])] for w in ast.obs_vars)
    return seq, {p: model[p] for p in ast.param_names if p in model}
