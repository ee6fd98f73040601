"""Core membership, collusion and shill-bidding bounds, merged bids.

For a ratio ``gamma`` of the market objective the profit of a losing
coalition ``K`` deviating to ``B_K`` is at most::

    (1/gamma - 1) * (J(C) - J(C_{-K}, B_K))  <=  (1/gamma - 1) * (J(C) - J(C_{-K}, B0_K))

and the extra profit of a bidder ``l`` splitting into shills ``B_S`` is at
most ``(1/gamma - 1) * (J(C_{-l}) - J(C_{-l}, B_S))``, itself at most the same
expression with the zero bid ``B0_l``. ``B0`` keeps the quantity domain and
prices everything at zero.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from . import bids as bidmod
from .bids import Block, BlockMenu, DomainError, PiecewiseLinear, PiecewiseQuadratic
from .dispatch import DispatchConfig, make_oracle, solve
from .model import Bidder, BidProfile, MarketInstance
from .setfunc import BidderSet, CapExceeded
from .vcg import Infeasible, PivotUndefined, run_vcg, true_cost_map


class PreconditionError(ValueError):
    pass


# ------------------------------------------------------------------------ core


@dataclass(frozen=True)
class CoreCheck:
    in_core: bool
    blocking: tuple  # (BidderSet, slack) with slack <= tol: tight or violated
    efficiency_residual: float
    labels: tuple = ()

    def to_dict(self) -> dict:
        return {
            "in_core": self.in_core,
            "efficiency_residual": self.efficiency_residual,
            "blocking": [{"S": s.labels(self.labels), "slack": v} for s, v in self.blocking],
        }


def check_core(instance: MarketInstance, true_costs, outcome, tol: float = 1e-7,
               exhaustive_cap: int = 12, workers: int = 1) -> CoreCheck:
    """Test ``u0 + sum_{l in S} u_l >= -J(C_S)`` for every proper subset ``S``.

    ``tol`` is relative: a constraint counts as violated when its slack is
    below ``-tol * (1 + |J(C)|)``.
    """
    n = instance.n
    if n > exhaustive_cap:
        raise CapExceeded(f"{n} bidders exceed exhaustive cap {exhaustive_cap}")
    C = BidProfile(true_cost_map(instance, true_costs), "truthful")
    oracle = make_oracle(instance, C)
    table = oracle.table(workers)
    ids = instance.ids
    u = np.array([outcome.utilities[i] for i in ids])
    abs_tol = tol * (1.0 + abs(outcome.J_full))
    full = (1 << n) - 1
    blocking = []
    ok = True
    for S in range(full):
        js = table[S]
        if js == math.inf:
            continue
        slack = outcome.operator_utility + sum(u[k] for k in range(n) if S >> k & 1) + js
        if slack <= abs_tol:
            blocking.append((BidderSet(S, n), float(slack)))
            if slack < -abs_tol:
                ok = False
    eff = outcome.operator_utility + float(u.sum()) + table[full]
    blocking.sort(key=lambda t: t[1])
    return CoreCheck(bool(ok and abs(eff) <= abs_tol), tuple(blocking), float(eff), tuple(ids))


# ---------------------------------------------------------------- merged bids


def merge_bids(bids: Sequence[bidmod.BidFunction]) -> bidmod.BidFunction:
    """Infimal convolution ``min sum b_k(x_k) s.t. sum x_k = x`` of the bids.

    Continuous bids merge exactly by summing supply curves horizontally:
    piecewise-linear inputs give a piecewise-linear result, anything with a
    quadratic piece gives a piecewise-quadratic one. Discrete bids merge into
    the menu of all acceptance-pattern sums (cheapest price per quantity).
    """
    bids = list(bids)
    if not bids:
        raise ValueError("nothing to merge")
    if len(bids) == 1:
        return bids[0]
    disc = [bidmod.is_discrete(b) for b in bids]
    if any(disc) and not all(disc):
        raise DomainError("cannot merge block and continuous bids")
    if all(disc):
        return _merge_menus(bids)
    return _merge_curves(bids)


def _merge_menus(bids) -> BlockMenu:
    best: dict[float, float] = {}
    exact: dict[float, float] = {}
    choices = [[(0.0, 0.0)] + bidmod.menu(b) for b in bids]
    for combo in itertools.product(*choices):
        q = sum(c[0] for c in combo)
        p = sum(c[1] for c in combo)
        if q <= 0:
            continue
        key = round(q, 9)
        if key not in best or p < best[key]:
            best[key] = p
            exact[key] = q
    return BlockMenu(tuple(sorted((exact[k], best[k]) for k in best)))


def _merge_curves(bids):
    segs = [bidmod.segments(b) for b in bids]
    prices = sorted({m for s in segs for _, m0, m1 in s for m in (m0, m1)})

    def supply(p: float, right: bool) -> float:
        # total quantity offered at marginal price p (left or right limit)
        tot = 0.0
        for s in segs:
            for length, m0, m1 in s:
                if m1 > m0:
                    tot += length * min(max((p - m0) / (m1 - m0), 0.0), 1.0)
                elif p > m0 or (right and p == m0):
                    tot += length
        return tot

    out = []
    for i, p in enumerate(prices):
        jump = supply(p, True) - supply(p, False)
        if jump > 0:
            out.append((jump, p, p))
        if i + 1 < len(prices):
            q = prices[i + 1]
            length = supply(q, False) - supply(p, True)
            if length > 0:
                out.append((length, p, q))
    out = [s for s in out if s[0] > 1e-12]
    if all(m0 == m1 for _, m0, m1 in out):
        pts = [(0.0, 0.0)]
        for length, m, _ in out:
            pts.append((pts[-1][0] + length, pts[-1][1] + m * length))
        return PiecewiseLinear(tuple(pts))
    return PiecewiseQuadratic(tuple(out))


# -------------------------------------------------------------------- bounds


@dataclass(frozen=True)
class ManipulationBound:
    kind: str  # "collusion" | "shill"
    actor: tuple  # bidder ids of the colluders, or (owner,)
    gamma: float
    bound_worstcase: float
    bound_specific: Optional[float] = None
    achieved: Optional[float] = None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "actor": list(self.actor), "gamma": self.gamma,
                "bound_specific": self.bound_specific, "bound_worstcase": self.bound_worstcase,
                "achieved": self.achieved}


def _factor(gamma: float) -> float:
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    return 1.0 / gamma - 1.0


def _ids(instance: MarketInstance, K) -> list[int]:
    if isinstance(K, BidderSet):
        return K.labels(instance.ids)
    return list(K)


def losing_under_truth(instance: MarketInstance, profile_minusK: BidProfile, K, true_costs=None,
                       config: DispatchConfig = DispatchConfig(), tol: float = 1e-9) -> bool:
    costs = true_cost_map(instance, true_costs)
    K = _ids(instance, K)
    C = profile_minusK.replace({l: costs[l] for l in K})
    res = solve(instance, C, None, config)
    return res.optimal and all(res.allocation[l] <= tol for l in K)


def collusion_bound(instance: MarketInstance, profile_minusK: BidProfile, K, gamma: float,
                    deviation: Optional[Mapping[int, bidmod.BidFunction]] = None,
                    true_costs=None, config: DispatchConfig = DispatchConfig()
                    ) -> ManipulationBound:
    """Bound on the joint profit of losing coalition ``K``.

    ``profile_minusK`` supplies the other bidders' bids; colluders' entries
    are replaced by their true costs to form ``C``. With ``deviation`` (bids
    for the members of ``K``) the deviation-specific bound and the profit
    actually achieved by it are filled in as well.
    """
    f = _factor(gamma)
    K = _ids(instance, K)
    costs = true_cost_map(instance, true_costs)
    C = profile_minusK.replace({l: costs[l] for l in K})
    base = solve(instance, C, None, config)
    if not base.optimal:
        raise Infeasible("truthful profile is infeasible")
    winners = [l for l in K if base.allocation[l] > 1e-9 * (1.0 + abs(base.allocation[l]))]
    if winners:
        raise PreconditionError(f"bidders {winners} win under their true costs")
    jc = base.objective
    cfg = DispatchConfig(config.tol, False, config.block_method)
    B0 = C.replace({l: bidmod.zero_bid(costs[l]) for l in K})
    worst = f * (jc - solve(instance, B0, None, cfg).objective)
    specific = achieved = None
    if deviation is not None:
        B = C.replace({l: deviation[l] for l in K})
        specific = f * (jc - solve(instance, B, None, cfg).objective)
        out = run_vcg(instance, B, costs, config)
        achieved = float(sum(out.utilities[l] for l in K))
    return ManipulationBound("collusion", tuple(K), gamma, worst, specific, achieved)


def shill_instance(instance: MarketInstance, l: int, n_shills: int) -> tuple[MarketInstance, list[int]]:
    """Instance where bidder ``l`` is replaced by ``n_shills`` synthetic bidders
    at its bus, tagged with ``owner = l``."""
    owner = instance.bidder(l)
    first = max(instance.ids) + 1
    shill_ids = list(range(first, first + n_shills))
    synth = tuple(Bidder(i, owner.bus, owner.true_cost, owner.supply_type, owner=l)
                  for i in shill_ids)
    rest = tuple(b for b in instance.bidders if b.id != l)
    dl = instance.d_linear
    if l in dl.x:
        x = {k: v for k, v in dl.x.items() if k != l}
        x.update({i: dl.x[l] for i in shill_ids})
        dl = replace(dl, x=x)
    return replace(instance, bidders=rest + synth, d_linear=dl), shill_ids


def _without(instance: MarketInstance, profile: BidProfile, l: int) -> BidProfile:
    return BidProfile({k: v for k, v in profile.bids.items() if k != l}, profile.label)


@dataclass(frozen=True)
class ShillOutcome:
    advantage: float  # shill utility minus single truthful utility
    shill_utility: float
    truthful_utility: float
    J_split: float
    J_merged: float


def shill_bound(instance: MarketInstance, profile_minus_l: BidProfile, l: int, gamma: float,
                shills: Optional[Sequence[bidmod.BidFunction]] = None, true_costs=None,
                config: DispatchConfig = DispatchConfig()) -> ManipulationBound:
    """Bound on the extra profit bidder ``l`` gains from bidding via ``shills``."""
    f = _factor(gamma)
    costs = true_cost_map(instance, true_costs)
    C = profile_minus_l.replace({l: costs[l]})
    cfg = DispatchConfig(config.tol, False, config.block_method)
    others = [i for i in instance.ids if i != l]
    j_minus = solve(instance, C, others, cfg).objective
    if j_minus == math.inf:
        raise PivotUndefined(l)
    j0 = solve(instance, C.replace({l: bidmod.zero_bid(costs[l])}), None, cfg).objective
    worst = f * (j_minus - j0)
    specific = achieved = None
    if shills is not None:
        out = simulate_shill(instance, profile_minus_l, l, shills, true_costs, config)
        specific = f * (j_minus - out.J_split)
        achieved = out.advantage
    return ManipulationBound("shill", (l,), gamma, worst, specific, achieved)


def simulate_shill(instance: MarketInstance, profile_minus_l: BidProfile, l: int,
                   shills: Sequence[bidmod.BidFunction], true_costs=None,
                   config: DispatchConfig = DispatchConfig()) -> ShillOutcome:
    """VCG outcome of ``l`` bidding through ``shills`` versus bidding truthfully.

    Raises :class:`DomainError` when the shills are allocated a total that
    ``l``'s true cost is not defined at.
    """
    costs = true_cost_map(instance, true_costs)
    C = profile_minus_l.replace({l: costs[l]})
    truthful = run_vcg(instance, C, costs, config).utilities[l]
    ext, sids = shill_instance(instance, l, len(shills))
    B = _without(instance, C, l).replace(dict(zip(sids, shills)))
    out = run_vcg(ext, B, None, config, with_utilities=False)
    total = sum(out.allocation[k] for k in sids)
    cost = 0.0 if total == 0.0 else bidmod.eval_bid(costs[l], total)
    util = sum(out.payments[k] for k in sids) - cost
    merged = C.replace({l: merge_bids(shills)})
    cfg = DispatchConfig(config.tol, False, config.block_method)
    jm = solve(instance, merged, None, cfg).objective
    return ShillOutcome(util - truthful, util, truthful, out.J_full, jm)


def random_split(f: bidmod.BidFunction, n: int, rng: np.random.Generator,
                 price_noise: float = 0.5) -> list[bidmod.BidFunction]:
    """Split ``f`` into ``n`` shill bids whose total capacity equals ``f``'s.

    Continuous bids become quadratics on random capacity shares with prices
    perturbed around ``f``'s marginal range; blocks become blocks on random
    shares with random prices.
    """
    total = bidmod.domain_max(f)
    shares = rng.dirichlet(np.ones(n)) * total
    lo = min_price = _unit_low(f)
    hi = max(_unit_high(f), lo + 1.0)
    out = []
    for s in shares:
        s = float(s)
        if s <= 1e-6 * total:
            s = 1e-6 * total
        if bidmod.is_discrete(f):
            out.append(Block(s, s * float(rng.uniform(0.0, hi * (1 + price_noise)))))
        else:
            b = float(rng.uniform(0.0, hi * (1 + price_noise)))
            a = float(rng.uniform(0.0, (hi - min_price) / max(s, 1e-9)))
            out.append(bidmod.Quadratic(a, b, s))
    return out


def _unit_low(f) -> float:
    if bidmod.is_discrete(f):
        return min(p / q for q, p in bidmod.menu(f))
    return min(m0 for _, m0, _ in bidmod.segments(f))


def _unit_high(f) -> float:
    if bidmod.is_discrete(f):
        return max(p / q for q, p in bidmod.menu(f))
    return max(m1 for _, _, m1 in bidmod.segments(f))


# ----------------------------------------------------------------- collusion


@dataclass(frozen=True)
class StrategySpace:
    """Joint deviations sampled for a coalition.

    Each colluder independently bids zero with ``zero_prob``, otherwise its
    true cost with prices scaled by a factor uniform in ``scale``; block
    colluders may instead pick a per-MW price from ``block_grid`` (as a
    fraction of their true unit price).
    """

    scale: tuple[float, float] = (0.0, 1.0)
    zero_prob: float = 0.2
    block_grid: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class CollusionResult:
    achieved: float
    best_deviation: Optional[dict]
    samples: int
    skipped: int


def sample_deviation(costs: Mapping[int, bidmod.BidFunction], K: Sequence[int],
                     space: StrategySpace, rng: np.random.Generator) -> dict:
    dev = {}
    for l in K:
        f = costs[l]
        r = rng.random()
        if r < space.zero_prob:
            dev[l] = bidmod.zero_bid(f)
        elif bidmod.is_discrete(f) and space.block_grid and r < space.zero_prob + 0.3:
            dev[l] = bidmod.scale_prices(f, float(rng.choice(space.block_grid)))
        else:
            dev[l] = bidmod.scale_prices(f, float(rng.uniform(*space.scale)))
    return dev


def simulate_collusion(instance: MarketInstance, true_costs, K, strategy_space: StrategySpace = StrategySpace(),
                       n_samples: int = 100, seed: int = 0, profile_minusK: Optional[BidProfile] = None,
                       config: DispatchConfig = DispatchConfig()) -> CollusionResult:
    """Best total utility of ``K`` over sampled joint deviations.

    The all-zero deviation is always evaluated first. Other bidders bid
    ``profile_minusK`` (default: truthfully).
    """
    costs = true_cost_map(instance, true_costs)
    K = _ids(instance, K)
    base = profile_minusK if profile_minusK is not None else BidProfile(dict(costs), "truthful")
    base = base.replace({l: costs[l] for l in K})
    if not losing_under_truth(instance, base, K, costs, config):
        raise PreconditionError("coalition members must lose under their true costs")
    rng = np.random.default_rng(seed)
    best, arg, done, skipped = -math.inf, None, 0, 0
    for k in range(max(n_samples, 1)):
        if k == 0:
            dev = {l: bidmod.zero_bid(costs[l]) for l in K}
        else:
            dev = sample_deviation(costs, K, strategy_space, rng)
        try:
            out = run_vcg(instance, base.replace(dev), costs, config)
        except (PivotUndefined, Infeasible):
            skipped += 1
            continue
        done += 1
        val = float(sum(out.utilities[l] for l in K))
        if val > best:
            best, arg = val, {str(l): bidmod.bid_to_dict(dev[l]) for l in K}
    return CollusionResult(best if done else 0.0, arg, done, skipped)
