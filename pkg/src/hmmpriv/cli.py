"""Command-line entry point.

Exit codes: 0 holds / success, 1 violation found, 2 usage or input error,
3 backend unavailable or unknown verdict.  Errors go to stderr as JSON.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__, mechanisms, scenario, symbols
from .algebra import AlgebraError, format_rational, parse_rational
from .bounds import BoundError, BoundRequest, binary_search_bound, find_interval
from .hmm import Hmm, InformationState, ModelError
from .satred import CnfError, build_sat_hmm, brute_force_sat, max_gap, parse_dimacs
from .smt import SolverConfig
from .stattest import StatTestError, TestPlan, curve_csv, curve_rows, pvalue_curve
from .verifier import (
    VerificationError,
    c_for_eps,
    certify_counterexample,
    verify,
)

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE, EXIT_UNKNOWN = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write(text: str, path: str | None = None) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
        return
    try:
        sys.stdout.write(text)
        sys.stdout.flush()
    except BrokenPipeError:
        # reader went away (e.g. `| head`); keep the exit code, drop the rest
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())


def _emit(obj, path: str | None = None) -> None:
    _write(json.dumps(obj, indent=1, ensure_ascii=False) + "\n", path)


def _fail(kind: str, message: str, code: int = EXIT_USAGE) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}, ensure_ascii=False) + "\n")
    return code


def _load_json(path: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from None


# argument helpers ------------------------------------------------------------------------


def _ints(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip() != "")
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _mechanism_input(kind: str, text: str):
    if kind == "above-threshold":
        if ":" not in text:
            raise UsageError("Above Threshold input is THRESHOLD:q1,q2,...")
        t, rest = text.split(":", 1)
        return int(t), _ints(rest)
    return _ints(text)


def _mechanism_spec(args):
    kind = args.mechanism
    if kind == "geometric":
        return mechanisms.GeometricSpec(parse_rational(args.alpha), args.n)
    if kind in ("noisy-max", "naive-noisy-max", "improved-noisy-max"):
        variant = {"naive-noisy-max": "naive", "improved-noisy-max": "improved"}.get(kind, args.variant)
        return mechanisms.NoisyMaxSpec(variant, args.queries, mechanisms.GeometricSpec(), args.index_base)
    if kind == "above-threshold":
        return mechanisms.AboveThresholdSpec()
    raise UsageError(f"unknown mechanism {kind!r}")


def _build(spec) -> Hmm:
    if isinstance(spec, mechanisms.GeometricSpec):
        return mechanisms.build_geometric_hmm(spec)
    if isinstance(spec, mechanisms.NoisyMaxSpec):
        return mechanisms.build_noisy_max_hmm(spec)
    return mechanisms.build_above_threshold_hmm(spec)


def _state_arg(h: Hmm, text: str) -> InformationState:
    if text.startswith("state:"):
        return InformationState.point_mass(h, text[len("state:"):])
    try:
        values = [parse_rational(x) for x in text.split(",")]
    except AlgebraError as exc:
        raise UsageError(str(exc)) from None
    state = InformationState.from_values(h, values)
    state.check(h)
    return state


def infer_adjacency(h: Hmm) -> list:
    """Neighbouring states guessed from the model's state names."""
    if all(s.isdigit() and len(s) < 3 for s in h.states) and len(h.states) > 1:
        return scenario.counting_adjacency(len(h.states) - 1)
    if any(s.startswith("t") and "r" in s for s in h.states):
        return mechanisms.above_threshold_adjacency()
    tops = [s for s in h.states if s.isdigit()]
    if tops:
        width = len(tops[0])
        pairs = scenario.entry_swap_adjacency(width)
        names = set(h.states)
        out = []
        for a, b in sorted(pairs):
            sa, sb = mechanisms.tuple_name(a), mechanisms.tuple_name(b)
            if sa in names and sb in names:
                out.append((sa, sb))
        return out
    raise UsageError("cannot infer adjacency for this model; pass --adjacency-file")


def _adjacency(args, h: Hmm) -> list:
    if getattr(args, "adjacency_file", None):
        raw = _load_json(args.adjacency_file)
        return [tuple(p) for p in raw]
    return infer_adjacency(h)


def _bound(args) -> Fraction:
    if args.c is not None and args.eps is not None:
        raise UsageError("give either --c or --eps, not both")
    if args.c is not None:
        try:
            return parse_rational(args.c)
        except AlgebraError as exc:
            raise UsageError(str(exc)) from None
    if args.eps is not None:
        # rounded up: a violation at this c is a violation at e^eps
        return c_for_eps(float(args.eps), "violation", Fraction(args.precision))
    raise UsageError("a ratio bound is required (--c or --eps)")


def _solver(args) -> SolverConfig:
    cfg = SolverConfig(timeout=args.smt_timeout)
    if args.solver_cmd:
        cfg.command = args.solver_cmd
    return cfg


def _pairs(args, h: Hmm) -> tuple:
    if args.scenario:
        try:
            sc = scenario.PufferfishScenario.from_json(_load_json(args.scenario))
        except scenario.ScenarioError as exc:
            raise UsageError(str(exc)) from None
        sc.check(h)
        return scenario.scenario_queries(sc, h), scenario.scenario_query_labels(sc)
    if args.pi or args.tau:
        if not (args.pi and args.tau):
            raise UsageError("--pi and --tau go together")
        return [(_state_arg(h, args.pi), _state_arg(h, args.tau))], ["pi|tau"]
    if args.pairs == "dp":
        adj = _adjacency(args, h)
        pairs = scenario.dp_neighbor_pairs(h, adj)
        labels = []
        seen = set()
        for a, b in adj:
            for x, y in ((a, b), (b, a)):
                if (x, y) not in seen:
                    seen.add((x, y))
                    labels.append(f"{x}|{y}")
        return pairs, labels
    raise UsageError("no pairs: use --pairs dp, --scenario FILE or --pi/--tau")


# commands ----------------------------------------------------------------------------


def cmd_build_model(args) -> int:
    h = _build(_mechanism_spec(args))
    _emit(h.to_json(), args.output)
    if args.scenario_out:
        builders = {
            "contagious-pair": scenario.contagious_pair_scenario,
            "independent": scenario.independent_count_scenario,
            "nm-contagious": lambda: scenario.noisy_max_disease_scenario(True),
            "nm-independent": lambda: scenario.noisy_max_disease_scenario(False),
        }
        if args.scenario_name not in builders:
            raise UsageError(f"--scenario-name must be one of {sorted(builders)}")
        Path(args.scenario_out).write_text(builders[args.scenario_name]().dumps() + "\n", encoding="utf-8")
    return EXIT_OK


def _load_model(path: str) -> Hmm:
    try:
        return Hmm.from_json(_load_json(path))
    except ModelError as exc:
        raise UsageError(str(exc)) from None


def _verify_report(args, default_pairs: str | None = None) -> int:
    h = _load_model(args.model)
    if default_pairs and not (args.scenario or args.pi or args.tau):
        args.pairs = default_pairs
    pairs, labels = _pairs(args, h)
    c = _bound(args)
    ks = range(args.kmin, args.kmax + 1)
    report = verify(
        h, pairs, c, ks, args.feasibility, args.backend, _solver(args), labels, args.jobs, args.first_only
    )
    out = report.to_json()
    first = report.first_violation()
    if first is not None:
        pi, tau = pairs[first[0].index]
        out["counterexample"]["pi"] = pi.to_json()
        out["counterexample"]["tau"] = tau.to_json()
    out["model"] = h.to_json()
    _emit(out, args.output)
    status = report.status
    if status == "violation":
        return EXIT_VIOLATION
    if status == "holds":
        return EXIT_OK
    return EXIT_UNKNOWN


def cmd_verify(args) -> int:
    return _verify_report(args)


def cmd_dp_check(args) -> int:
    return _verify_report(args, default_pairs="dp")


def cmd_certify(args) -> int:
    if args.report:
        rep = _load_json(args.report)
        cex = rep.get("counterexample")
        if not cex:
            raise UsageError("report has no counterexample block")
        try:
            h = Hmm.from_json(rep["model"])
            pi = InformationState.from_json(h, cex["pi"])
            tau = InformationState.from_json(h, cex["tau"])
        except (KeyError, ModelError) as exc:
            raise UsageError(f"report is missing model or start states: {exc}") from None
        c = parse_rational(rep["query"]["c"])
        seq = cex["sequence"]
        assignment = cex.get("assignment")
    else:
        if not (args.model and args.pi and args.tau and args.seq):
            raise UsageError("certify needs --report, or --model, --pi, --tau and --seq")
        h = _load_model(args.model)
        pi, tau = _state_arg(h, args.pi), _state_arg(h, args.tau)
        c = _bound(args)
        seq = [w.strip() for w in args.seq.split(",")]
        assignment = dict(kv.split("=", 1) for kv in args.assign) if args.assign else None
    try:
        cert = certify_counterexample(h, pi, tau, c, seq, assignment)
    except ModelError as exc:
        raise UsageError(str(exc)) from None
    out = {
        "valid": cert["valid"],
        "sequence": [symbols.normalize(w) for w in seq],
        "sequence_unicode": [symbols.pretty(symbols.normalize(w)) for w in seq],
        "p_pi": format_rational(cert["p_pi"]),
        "p_tau": format_rational(cert["p_tau"]),
        "c": format_rational(c),
        "ratio_direction": cert["ratio_direction"],
        "ratio": cert["ratio"],
    }
    _emit(out, args.output)
    return EXIT_VIOLATION if cert["valid"] else EXIT_OK


def _eps_grid(text: str) -> list:
    if ":" in text:
        try:
            lo, hi, step = (float(x) for x in text.split(":"))
        except ValueError:
            raise UsageError("eps grid is LO:HI:STEP or a comma list") from None
        n = int(round((hi - lo) / step))
        return [round(lo + i * step, 10) for i in range(n + 1)]
    return [float(x) for x in text.split(",")]


def cmd_test(args) -> int:
    spec = _mechanism_spec(args)
    if isinstance(spec, mechanisms.GeometricSpec):
        raise UsageError("the tester supports noisy-max and above-threshold")
    d1 = _mechanism_input(args.mechanism, args.d1)
    d2 = _mechanism_input(args.mechanism, args.d2)
    plan = TestPlan(spec, d1, d2, _eps_grid(args.eps_grid), args.n_select, args.n_detect, args.seed, args.jobs)
    curve = pvalue_curve(plan)
    rows = curve_rows(curve, args.jobs)
    if args.csv:
        Path(args.csv).write_text(curve_csv(curve), encoding="utf-8")
    _emit(rows, args.output)
    return EXIT_OK


def cmd_lower_bound(args) -> int:
    spec = _mechanism_spec(args)
    h = _build(spec)
    adj = _adjacency(args, h)
    pairs = scenario.dp_neighbor_pairs(h, adj)
    interval = None
    if args.interval:
        lo, hi = (float(x) for x in args.interval.split(","))
        interval = (lo, hi)
    plan = None
    if interval is None:
        if not (args.d1 and args.d2):
            raise UsageError("without --interval the tester needs --d1 and --d2")
        plan = TestPlan(
            spec,
            _mechanism_input(args.mechanism, args.d1),
            _mechanism_input(args.mechanism, args.d2),
            seed=args.seed,
            jobs=args.jobs,
        )
    req = BoundRequest(
        h, pairs, k_max=args.kmax, policy=args.feasibility, plan=plan, interval=interval,
        precision=args.precision_eps, c_precision=Fraction(args.precision),
    )
    result = binary_search_bound(req, find_interval(req))
    _emit(result.to_json(), args.output)
    return EXIT_OK if result.status in ("bracketed", "no-violation-in-interval") else EXIT_UNKNOWN


def cmd_sat_reduce(args) -> int:
    try:
        text = Path(args.cnf).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {args.cnf}: {exc.strerror}") from None
    f = parse_dimacs(text)
    inst = build_sat_hmm(f)
    g, seq = max_gap(inst)
    report = {
        "n_vars": f.n_vars,
        "clauses": [list(c) for c in f.clauses],
        "c": format_rational(inst.c),
        "max_gap": format_rational(g),
        "argmax": list(seq),
        "gap_zero": g == 0,
        "satisfiable_truth_table": brute_force_sat(f),
        "d1": inst.d1.to_json(),
        "d2": inst.d2.to_json(),
    }
    if args.model_out:
        _emit(inst.h.to_json(), args.model_out)
    _emit(report, args.output)
    return EXIT_OK


def cmd_run(args) -> int:
    spec = _mechanism_spec(args)
    if isinstance(spec, mechanisms.GeometricSpec):
        raise UsageError("run supports noisy-max and above-threshold")
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    inp = _mechanism_input(args.mechanism, args.input)
    lines = []
    for seed in range(args.seed, args.seed + args.runs):
        run = mechanisms.run_mechanism(spec, inp, seed)
        out = run.to_json()
        out["outputs_unicode"] = [symbols.pretty(w) for w in run.outputs]
        lines.append(json.dumps(out, ensure_ascii=False))
    _write("\n".join(lines) + "\n", args.output)
    return EXIT_OK


# parser ---------------------------------------------------------------------------------


def _common(p) -> None:
    p.add_argument("-o", "--output", help="write the JSON result here instead of stdout")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--precision", default="1/1000000", help="eps-to-c rounding grid (rational)")
    p.add_argument("--feasibility", choices=("any", "both"), default="any")
    p.add_argument("--solver-cmd", default=None, help="SMT-LIB solver command line, e.g. 'z3 -in -smt2'")
    p.add_argument("--smt-timeout", type=float, default=1200.0, help="seconds")


def _mechanism_args(p, required: bool = True) -> None:
    p.add_argument(
        "--mechanism",
        required=required,
        choices=("geometric", "noisy-max", "naive-noisy-max", "improved-noisy-max", "above-threshold"),
    )
    p.add_argument("--variant", choices=("naive", "improved"), default="improved")
    p.add_argument("--queries", type=int, default=3)
    p.add_argument("--index-base", type=int, default=1)
    p.add_argument("--alpha", default="1/2")
    p.add_argument("--n", type=int, default=2)


def _verify_args(p) -> None:
    p.add_argument("--model", required=True)
    p.add_argument("--pairs", choices=("dp",), default=None)
    p.add_argument("--adjacency-file", default=None, help="JSON list of [state, state] pairs")
    p.add_argument("--scenario", default=None)
    p.add_argument("--pi", default=None, help="comma-separated weights or state:NAME")
    p.add_argument("--tau", default=None)
    p.add_argument("--c", default=None)
    p.add_argument("--eps", default=None)
    p.add_argument("--kmin", type=int, default=1)
    p.add_argument("--kmax", type=int, default=1)
    p.add_argument("--backend", choices=("auto", "exact", "smt"), default="auto")
    p.add_argument("--first-only", action="store_true", help="stop after the first violated pair")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hmmpriv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-model", help="write a mechanism's HMM as JSON")
    _common(p)
    _mechanism_args(p)
    p.add_argument("--scenario-name", default=None)
    p.add_argument("--scenario-out", default=None)
    p.set_defaults(func=cmd_build_model)

    p = sub.add_parser("verify", help="check the ratio bound for given pairs")
    _common(p)
    _verify_args(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("dp-check", help="verify over all neighbouring states")
    _common(p)
    _verify_args(p)
    p.set_defaults(func=cmd_dp_check)

    p = sub.add_parser("certify", help="exact probabilities of one sequence")
    _common(p)
    p.add_argument("--report", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--pi", default=None)
    p.add_argument("--tau", default=None)
    p.add_argument("--seq", default=None, help="comma-separated observation symbols")
    p.add_argument("--assign", action="append", default=None, help="param=value, repeatable")
    p.add_argument("--c", default=None)
    p.add_argument("--eps", default=None)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("test", help="statistical p-value curve")
    _common(p)
    _mechanism_args(p)
    p.add_argument("--d1", required=True)
    p.add_argument("--d2", required=True)
    p.add_argument("--eps-grid", default="0:2:0.1")
    p.add_argument("--n-select", type=int, default=50_000)
    p.add_argument("--n-detect", type=int, default=200_000)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("lower-bound", help="tested interval plus exact binary search")
    _common(p)
    _mechanism_args(p)
    p.add_argument("--interval", default=None, help="LO,HI")
    p.add_argument("--d1", default=None)
    p.add_argument("--d2", default=None)
    p.add_argument("--kmax", type=int, default=2)
    p.add_argument("--precision-eps", type=float, default=1e-3)
    p.add_argument("--adjacency-file", default=None)
    p.set_defaults(func=cmd_lower_bound)

    p = sub.add_parser("sat-reduce", help="CNF (DIMACS) to HMM plus gap report")
    _common(p)
    p.add_argument("cnf")
    p.add_argument("--model-out", default=None)
    p.set_defaults(func=cmd_sat_reduce)

    p = sub.add_parser("run", help="execute a mechanism once")
    _common(p)
    _mechanism_args(p)
    p.add_argument("--input", required=True)
    p.add_argument("--runs", type=int, default=1, help="one JSONL record per seed, starting at --seed")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        try:
            Fraction(args.precision)
        except (ValueError, ZeroDivisionError):
            raise UsageError(f"bad --precision {args.precision!r}") from None
        return args.func(args)
    except UsageError as exc:
        return _fail("usage", str(exc))
    except (ModelError, scenario.ScenarioError, mechanisms.MechanismError, CnfError) as exc:
        return _fail("input", str(exc))
    except (VerificationError, StatTestError, BoundError, AlgebraError, ValueError) as exc:
        return _fail("input", str(exc))
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
