"""Privacy-budget lower bounds: a tested interval refined by exact binary search."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

from .algebra import format_rational
from .hmm import Hmm
from .stattest import TestPlan, pvalue_curve
from .verifier import DEFAULT_PRECISION, Counterexample, decide_eps


class BoundError(ValueError):
    pass


@dataclass
class BoundRequest:
    h: Hmm
    pairs: list
    k_max: int = 2
    k_min: int = 1
    policy: str = "any"
    plan: TestPlan | None = None  # tester inputs, used when no interval is given
    interval: tuple | None = None
    precision: float = 1e-3
    grid_step: float = 0.05
    grid_max: float = 3.0
    c_precision: Fraction = DEFAULT_PRECISION

    def __post_init__(self):
        if self.precision <= 0:
            raise BoundError("precision must be positive")
        if self.interval is not None and not self.interval[0] < self.interval[1]:
            raise BoundError("interval needs lo < hi")
        if self.k_max < self.k_min or self.k_min < 1:
            raise BoundError("need 1 <= k_min <= k_max")

    @property
    def ks(self) -> list:
        return list(range(self.k_min, self.k_max + 1))


@dataclass
class BoundResult:
    eps_lo: float
    eps_hi: float
    status: str  # bracketed | no-violation-in-interval | violation-at-upper-end | undecided
    iterations: int = 0
    steps: list = field(default_factory=list)
    counterexample: Counterexample | None = None
    counterexample_pair: int | None = None
    horizon: int = 0

    @property
    def label(self) -> str:
        return f"lower bound at horizon k_max={self.horizon}"

    def to_json(self) -> dict:
        out = {
            "eps_lo": self.eps_lo,
            "eps_hi": self.eps_hi,
            "status": self.status,
            "iterations": self.iterations,
            "label": self.label,
            "steps": self.steps,
        }
        if self.counterexample is not None:
            out["counterexample"] = self.counterexample.to_json()
            out["counterexample"]["pair"] = self.counterexample_pair
        return out


def find_interval(req: BoundRequest) -> tuple:
    """(lo, hi): largest grid eps with p < 0.05, smallest grid eps with p >= 0.99."""
    if req.interval is not None:
        return tuple(req.interval)
    if req.plan is None:
        raise BoundError("no interval and no test plan given")
    n = int(round(req.grid_max / req.grid_step))
    grid = [round(i * req.grid_step, 10) for i in range(n + 1)]
    plan = TestPlan(
        req.plan.spec, req.plan.d1, req.plan.d2, grid, req.plan.n_select, req.plan.n_detect, req.plan.seed, req.plan.jobs
    )
    curve = pvalue_curve(plan)
    rejected = [r["eps"] for r in curve if r["p"] < 0.05]
    accepted = [r["eps"] for r in curve if r["p"] >= 0.99]
    if not rejected:
        raise BoundError("no tested eps was rejected (p < 0.05); supply an interval manually")
    lo = max(rejected)
    above = [e for e in accepted if e > lo]
    if not above:
        raise BoundError("no tested eps above the rejected range reached p >= 0.99; supply an interval manually")
    return lo, min(above)


def binary_search_bound(req: BoundRequest, interval: tuple | None = None) -> BoundResult:
    """Shrink [lo, hi] keeping an exact violation at lo and exact satisfaction at hi."""
    lo, hi = interval if interval is not None else find_interval(req)
    lo, hi = float(lo), float(hi)
    steps = []

    def decide(eps):
        status, evidence = decide_eps(req.h, req.pairs, eps, req.ks, req.policy, req.c_precision)
        steps.append({"eps": eps, "verdict": status})
        return status, evidence

    s_lo, ev_lo = decide(lo)
    if s_lo == "holds":
        return BoundResult(lo, lo, "no-violation-in-interval", 0, steps, horizon=req.k_max)
    if s_lo == "undecided":
        return BoundResult(lo, hi, "undecided", 0, steps, horizon=req.k_max)
    s_hi, ev_hi = decide(hi)
    if s_hi != "holds":
        status = "violation-at-upper-end" if s_hi == "violation" else "undecided"
        pair, verdict = ev_hi
        return BoundResult(hi, hi, status, 0, steps, verdict.counterexample, pair, req.k_max)
    evidence = ev_lo
    iterations = 0
    while hi - lo > req.precision:
        mid = (lo + hi) / 2
        iterations += 1
        status, ev = decide(mid)
        if status == "violation":
            lo, evidence = mid, ev
        elif status == "holds":
            hi = mid
        else:
            return BoundResult(lo, hi, "undecided", iterations, steps, evidence[1].counterexample, evidence[0], req.k_max)
    pair, verdict = evidence
    return BoundResult(lo, hi, "bracketed", iterations, steps, verdict.counterexample, pair, req.k_max)


def expected_iterations(lo: float, hi: float, precision: float) -> int:
    return max(0, math.ceil(math.log2((hi - lo) / precision)))


def c_label(c: Fraction) -> str:
    return format_rational(c)
