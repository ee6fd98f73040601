"""VCG payments with the Clarke pivot, utilities, and truthfulness harnesses.

Payment of bidder ``l`` under profile ``B``::

    p_l = b_l(x*_l) + J(B_{-l}) - J(B)

Bidder utility is ``p_l - c_l(x*_l)`` against the true cost ``c_l`` and the
operator's utility is ``-sum(p) - d(x*, y*)``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from . import bids as bidmod
from .dispatch import DispatchConfig, DispatchResult, solve
from .model import BidProfile, MarketInstance


class PivotUndefined(ValueError):
    """``J(B_{-l})`` is infinite, so bidder ``l``'s payment is undefined."""

    def __init__(self, bidder: int):
        super().__init__(f"removing bidder {bidder} makes the dispatch infeasible")
        self.bidder = bidder


class Infeasible(ValueError):
    """The full bid profile admits no feasible dispatch."""


@dataclass(frozen=True)
class VcgOutcome:
    payments: Mapping[int, float]
    utilities: Mapping[int, float]
    operator_utility: float
    J_full: float
    J_minus: Mapping[int, float]
    allocation: Mapping[int, float]
    bid_values: Mapping[int, float] = field(default_factory=dict)
    d_cost: float = 0.0
    dispatch: Optional[DispatchResult] = None

    def recompute_payments(self) -> dict[int, float]:
        return {l: self.bid_values[l] + self.J_minus[l] - self.J_full for l in self.payments}

    def to_dict(self) -> dict:
        key = lambda m: {str(k): v for k, v in sorted(m.items())}  # noqa: E731
        return {
            "J_full": self.J_full,
            "operator_utility": self.operator_utility,
            "payments": key(self.payments),
            "utilities": key(self.utilities),
            "J_minus": key(self.J_minus),
            "allocation": key(self.allocation),
        }


def true_cost_map(instance: MarketInstance, true_costs=None) -> dict:
    """Bidder id -> true cost curve; ``true_costs`` overrides entries."""
    out = {b.id: b.true_cost for b in instance.bidders}
    if true_costs is not None:
        out.update(true_costs.bids if isinstance(true_costs, BidProfile) else true_costs)
    return out


def run_vcg(instance: MarketInstance, profile: BidProfile, true_costs=None,
            config: DispatchConfig = DispatchConfig(), workers: int = 1,
            with_utilities: bool = True) -> VcgOutcome:
    """VCG outcome of ``profile``; utilities use ``true_costs`` (default: the
    instance's true costs) even when the profile is strategic."""
    full = solve(instance, profile, None, config)
    if not full.optimal:
        raise Infeasible("no feasible dispatch for the full bid profile")
    ids = instance.ids
    minus_cfg = DispatchConfig(config.tol, False, config.block_method)

    def j_minus(l):
        return solve(instance, profile, [i for i in ids if i != l], minus_cfg).objective

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            jm = dict(zip(ids, pool.map(j_minus, ids)))
    else:
        jm = {l: j_minus(l) for l in ids}
    for l in ids:
        if jm[l] == math.inf:
            raise PivotUndefined(l)
    alloc = dict(full.allocation)
    bid_values = {l: _value(profile.bids[l], alloc[l]) for l in ids}
    pay = {l: bid_values[l] + jm[l] - full.objective for l in ids}
    util = {}
    if with_utilities:
        costs = true_cost_map(instance, true_costs)
        util = {l: pay[l] - _value(costs[l], alloc[l]) for l in ids}
    u0 = -sum(pay.values()) - full.d_cost
    return VcgOutcome(pay, util, u0, full.objective, jm, alloc, bid_values, full.d_cost, full)


def _value(f, q: float) -> float:
    return 0.0 if q == 0.0 else bidmod.eval_bid(f, q)


def check_individual_rationality(outcome: VcgOutcome, tol: float = 1e-9) -> bool:
    """True iff every bidder utility is at least ``-tol`` (truthful outcomes)."""
    return all(u >= -tol for u in outcome.utilities.values())


# ------------------------------------------------------------------ deviations


def shift_prices(f, delta: float):
    """Add ``delta`` $/MW to every marginal price of ``f``."""
    if isinstance(f, bidmod.Block):
        return bidmod.Block(f.quantity, f.price + delta * f.quantity)
    if isinstance(f, bidmod.BlockMenu):
        return bidmod.BlockMenu(tuple((q, p + delta * q) for q, p in f.options))
    if isinstance(f, bidmod.Quadratic):
        return bidmod.Quadratic(f.a, f.b + delta, f.cap)
    if isinstance(f, bidmod.PiecewiseLinear):
        return bidmod.PiecewiseLinear(tuple((q, p + delta * q) for q, p in f.breakpoints))
    return bidmod.PiecewiseQuadratic(tuple((n, a + delta, b + delta) for n, a, b in f.segments))


def min_marginal(f) -> float:
    if bidmod.is_discrete(f):
        return min(p / q for q, p in bidmod.menu(f))
    return min(m0 for _, m0, _ in bidmod.segments(f))


def random_deviation(f, rng: np.random.Generator):
    """Scaled, shifted, truncated or zero version of ``f`` (domain kept within f's)."""
    kinds = ["scale", "shift", "zero"] + ([] if bidmod.is_discrete(f) else ["truncate"])
    kind = kinds[int(rng.integers(len(kinds)))]
    if kind == "scale":
        return kind, bidmod.scale_prices(f, float(rng.uniform(0.0, 2.0)))
    if kind == "shift":
        lo = -min_marginal(f)
        return kind, shift_prices(f, float(rng.uniform(lo, lo + 2.0 * (1.0 - lo))))
    if kind == "zero":
        return kind, bidmod.zero_bid(f)
    cap = bidmod.domain_max(f) * float(rng.uniform(0.05, 1.0))
    return kind, bidmod.truncate(f, cap)


@dataclass(frozen=True)
class DsicReport:
    max_gain: float
    samples: int
    skipped: int
    worst: Optional[dict] = None

    def to_dict(self) -> dict:
        return {"max_gain": self.max_gain, "samples": self.samples, "skipped": self.skipped,
                "worst": self.worst}


def check_dsic_sample(instance: MarketInstance, true_costs=None, n_deviations: int = 1000,
                      seed: int = 0, sampler=None,
                      config: DispatchConfig = DispatchConfig()) -> DsicReport:
    """Largest utility gain of a unilateral deviation over truthful bidding.

    Each sample draws a random bidder, a random opponent profile from
    ``sampler`` and a random deviation of the bidder's true cost. Samples
    where a pivot is undefined are skipped and counted.
    """
    from .cases import BidSampler, sample_profile

    sampler = BidSampler() if sampler is None else sampler
    rng = np.random.default_rng(seed)
    costs = true_cost_map(instance, true_costs)
    ids = instance.ids
    best, worst, done, skipped = -math.inf, None, 0, 0
    for _ in range(n_deviations):
        l = ids[int(rng.integers(len(ids)))]
        others = sample_profile(instance, sampler, rng)
        truthful = others.replace({l: costs[l]})
        kind, dev = random_deviation(costs[l], rng)
        try:
            u_true = run_vcg(instance, truthful, costs, config).utilities[l]
            u_dev = run_vcg(instance, truthful.replace({l: dev}), costs, config).utilities[l]
        except (PivotUndefined, Infeasible):
            skipped += 1
            continue
        done += 1
        gain = u_dev - u_true
        if gain > best:
            best, worst = gain, {"bidder": l, "kind": kind, "gain": gain}
    return DsicReport(best if done else 0.0, done, skipped, worst)
