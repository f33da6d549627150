"""Sampling-based privacy audit in the style of StatDP.

For an input pair (D1, D2) and a budget eps, pick the output event that best
separates the two sides on one batch of samples, then test it on a fresh
batch.  The test conditions on the total count: if the mechanism were eps-DP
then, given c1 + c2 hits, c1 is stochastically dominated by
Binomial(c1 + c2, e^eps / (1 + e^eps)).
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binom

from . import symbols
from .mechanisms import decode_output, sample_codes


class StatTestError(ValueError):
    pass


@dataclass(frozen=True)
class Event:
    kind: str  # "exact" or "prefix"
    pattern: tuple

    def matches(self, output: tuple) -> bool:
        if self.kind == "exact":
            return output == self.pattern
        return output[: len(self.pattern)] == self.pattern

    def __str__(self):
        body = ",".join(symbols.pretty(w) for w in self.pattern)
        return f"[{body}]" if self.kind == "exact" else f"[{body},...]"


@dataclass
class TestPlan:
    spec: object
    d1: object
    d2: object
    epsilons: list = field(default_factory=lambda: [round(0.1 * i, 10) for i in range(21)])
    n_select: int = 50_000
    n_detect: int = 200_000
    seed: int = 0
    jobs: int = 1
    prior: object = None  # a DatasetPrior; parametric priors are refused

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if self.n_select <= 0 or self.n_detect <= 0:
            raise StatTestError("sample sizes must be positive")
        if self.jobs < 1:
            raise StatTestError("jobs must be >= 1")
        if self.prior is not None and getattr(self.prior, "params", ()):
            raise StatTestError(
                "prior has unknown parameters; sampling needs concrete values, use the exact/SMT verifier instead"
            )


def hypothesis_test(c1: int, c2: int, n: int | None = None, eps: float = 0.0) -> float:
    """p-value of H0 "Pr1(E) <= e^eps Pr2(E)" given event counts c1, c2 (n samples per side)."""
    if c1 < 0 or c2 < 0 or (n is not None and (c1 > n or c2 > n)):
        raise StatTestError("event counts must lie in 0..n")
    if c1 == 0:
        return 1.0
    q = math.exp(eps) / (1.0 + math.exp(eps)) if eps < 700 else 1.0
    return float(min(1.0, max(0.0, binom.sf(c1 - 1, c1 + c2, q))))


# sampling -------------------------------------------------------------------------------


def _histogram(plan: TestPlan, inp, size: int, stream: int) -> dict:
    """Code histogram from ``size`` runs; chunked per worker on independent child seeds."""
    children = np.random.SeedSequence([plan.seed, stream]).spawn(plan.jobs)
    chunks = [size // plan.jobs + (1 if i < size % plan.jobs else 0) for i in range(plan.jobs)]

    def run(i):
        rng = np.random.default_rng(children[i])
        codes = sample_codes(plan.spec, inp, chunks[i], rng)
        vals, counts = np.unique(codes, return_counts=True)
        return dict(zip(vals.tolist(), counts.tolist()))

    if plan.jobs > 1:
        with ThreadPoolExecutor(max_workers=plan.jobs) as pool:
            parts = list(pool.map(run, range(plan.jobs)))
    else:
        parts = [run(0)]
    total: dict = {}
    for part in parts:
        for k, v in part.items():
            total[k] = total.get(k, 0) + v
    return total


def _outputs(plan: TestPlan, inp, hist: dict) -> dict:
    return {decode_output(plan.spec, inp, code): n for code, n in hist.items()}


def candidate_events(*output_counts: dict) -> list:
    seen = set()
    for counts in output_counts:
        for out in counts:
            seen.add(Event("exact", out))
            for j in range(1, len(out)):
                seen.add(Event("prefix", out[:j]))
    return sorted(seen, key=lambda e: (len(e.pattern), e.pattern, e.kind))


def event_count(event: Event, counts: dict) -> int:
    return sum(n for out, n in counts.items() if event.matches(out))


@dataclass
class _Samples:
    select: tuple  # (counts for D1, counts for D2)
    detect: tuple


def _draw(plan: TestPlan) -> _Samples:
    sel = (
        _outputs(plan, plan.d1, _histogram(plan, plan.d1, plan.n_select, 1)),
        _outputs(plan, plan.d2, _histogram(plan, plan.d2, plan.n_select, 2)),
    )
    det = (
        _outputs(plan, plan.d1, _histogram(plan, plan.d1, plan.n_detect, 3)),
        _outputs(plan, plan.d2, _histogram(plan, plan.d2, plan.n_detect, 4)),
    )
    return _Samples(sel, det)


def _select(candidates: list, a: dict, b: dict, n: int, eps: float) -> tuple:
    best, best_p = None, 2.0
    for e in candidates:
        p = hypothesis_test(event_count(e, a), event_count(e, b), n, eps)
        if p < best_p:
            best, best_p = e, p
    return best, best_p


def select_event(plan: TestPlan, eps: float, samples: _Samples | None = None) -> tuple:
    """(event, direction, selection p-value); direction 12 tests Pr1 > e^eps Pr2, 21 the reverse."""
    samples = samples or _draw(plan)
    a, b = samples.select
    candidates = candidate_events(a, b)
    if not candidates:
        raise StatTestError("no output observed on either input")
    e12, p12 = _select(candidates, a, b, plan.n_select, eps)
    e21, p21 = _select(candidates, b, a, plan.n_select, eps)
    return (e12, "12", p12) if p12 <= p21 else (e21, "21", p21)


def _detect(plan: TestPlan, samples: _Samples, eps: float) -> dict:
    a, b = samples.select
    candidates = candidate_events(a, b)
    if not candidates:
        raise StatTestError("no output observed on either input")
    da, db = samples.detect
    best = None
    for direction, (sa, sb, xa, xb) in (("12", (a, b, da, db)), ("21", (b, a, db, da))):
        event, _ = _select(candidates, sa, sb, plan.n_select, eps)
        p = hypothesis_test(event_count(event, xa), event_count(event, xb), plan.n_detect, eps)
        if best is None or p < best["p"]:
            best = {"eps": eps, "p": p, "event": event, "direction": direction}
    return best


def pvalue_curve(plan: TestPlan) -> list:
    """One row per eps: the smaller detection p-value over both input orders."""
    samples = _draw(plan)
    return [_detect(plan, samples, float(eps)) for eps in plan.epsilons]


def curve_rows(curve: list, jobs: int = 1) -> list:
    return [
        {"eps": r["eps"], "p": r["p"], "event": str(r["event"]), "direction": r["direction"], "jobs": jobs}
        for r in curve
    ]


def curve_csv(curve: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["eps", "p", "event", "direction"])
    for r in curve:
        writer.writerow([r["eps"], f"{r['p']:.6g}", str(r["event"]), r["direction"]])
    return buf.getvalue()
