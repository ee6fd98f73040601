"""Instance library: the 800 MW block example, IEEE test systems, bid samplers."""
from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from ..bids import Block, BlockMenu, Quadratic, domain_max, is_discrete, menu
from ..model import Bidder, BidProfile, Line, MarketInstance, Network
from .matpower import CaseWarning, ParseError, UnsupportedCost, parse_matpower_case

__all__ = [
    "simple_example", "parse_matpower_case", "load_case", "apply_overrides", "CaseOverride",
    "BidSampler", "sample_profile", "ParseError", "UnsupportedCost", "CaseWarning",
    "UnknownLine", "UnknownBus", "IEEE_CASES", "ieee14_limited", "ieee118_limited",
    "random_instance",
]

IEEE_CASES = ("case14", "case30", "case_ieee30", "case118")


class UnknownLine(KeyError):
    pass


class UnknownBus(KeyError):
    pass


def simple_example(epsilon: float = 0.01) -> tuple[MarketInstance, BidProfile]:
    """Single bus, 800 MW demand, one 800 MW block at $600 and two 400 MW
    blocks at $300 + epsilon."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    bidders = (
        Bidder(1, 0, Block(800.0, 600.0)),
        Bidder(2, 0, Block(400.0, 300.0 + epsilon)),
        Bidder(3, 0, Block(400.0, 300.0 + epsilon)),
    )
    inst = MarketInstance(bidders, Network.single_bus(800.0), meta={"name": "simple_example",
                                                                     "epsilon": epsilon})
    return inst, inst.truthful_profile()


def load_case(name: str, demand_scale: float = 1.0) -> MarketInstance:
    """One of the bundled MATPOWER cases (see ``IEEE_CASES``).

    ``case30`` is the Alsac & Stott variant with line ratings;
    ``case_ieee30`` is the unrated IEEE archive version.
    """
    if name not in IEEE_CASES:
        raise KeyError(f"unknown case {name!r}; bundled: {', '.join(IEEE_CASES)}")
    text = resources.files(__package__).joinpath("data", f"{name}.m").read_text()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CaseWarning)
        inst = parse_matpower_case(text, name)
    if demand_scale != 1.0:
        inst = dataclasses.replace(inst, network=inst.network.with_demand_scale(demand_scale),
                                   meta={**inst.meta, "demand_scale": demand_scale})
    return inst


@dataclass(frozen=True)
class CaseOverride:
    line_limits: tuple[tuple[int, int, Optional[float]], ...] = ()
    added_bidders: tuple[Bidder, ...] = ()


def apply_overrides(instance: MarketInstance, override: CaseOverride) -> MarketInstance:
    """Copy of ``instance`` with line limits replaced and bidders appended.

    A ``(from, to)`` pair matches lines in either orientation, including
    parallel circuits.
    """
    net = instance.network
    lines = list(net.lines)
    for a, b, limit in override.line_limits:
        hit = False
        for k, ln in enumerate(lines):
            if {ln.from_bus, ln.to_bus} == {a, b}:
                lines[k] = Line(ln.from_bus, ln.to_bus, ln.susceptance, limit)
                hit = True
        if not hit:
            raise UnknownLine(f"no line between buses {a} and {b}")
    known = {bus.id for bus in net.buses}
    ids = set(instance.ids)
    for bd in override.added_bidders:
        if bd.bus not in known:
            raise UnknownBus(f"bidder {bd.id} on unknown bus {bd.bus}")
        if bd.id in ids:
            raise ValueError(f"duplicate bidder id {bd.id}")
        ids.add(bd.id)
    if not override.line_limits and not override.added_bidders:
        return instance
    return dataclasses.replace(
        instance,
        bidders=instance.bidders + tuple(override.added_bidders),
        network=dataclasses.replace(net, lines=tuple(lines)),
    )


def ieee14_limited(limit: float = 10.0) -> MarketInstance:
    """IEEE 14-bus with ``limit`` MW on both lines leaving bus 1."""
    return apply_overrides(load_case("case14"), CaseOverride(((1, 2, limit), (1, 5, limit))))


def ieee118_limited(limit: float = 50.0) -> MarketInstance:
    """IEEE 118-bus with ``limit`` MW on lines 5-6 and 9-10."""
    return apply_overrides(load_case("case118"), CaseOverride(((5, 6, limit), (9, 10, limit))))


@dataclass(frozen=True)
class BidSampler:
    """Uniform bid sampler.

    Continuous bidders get ``Quadratic(a, b, cap)`` with ``a``, ``b`` uniform
    in their ranges and ``cap`` the true capacity times a factor drawn from
    ``cap_factor``. Block bidders keep their quantities and get a per-MW
    price uniform in ``block_unit_price`` (the price of every menu option
    is redrawn).
    """

    a_range: tuple[float, float] = (0.0, 0.1)
    b_range: tuple[float, float] = (10.0, 50.0)
    cap_factor: tuple[float, float] = (1.0, 1.0)
    block_unit_price: tuple[float, float] = (0.0, 1.5)
    seed: int = 0


def _u(rng: np.random.Generator, lo_hi: Sequence[float]) -> float:
    lo, hi = lo_hi
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def sample_profile(instance: MarketInstance, sampler: BidSampler = BidSampler(),
                   rng: Optional[np.random.Generator] = None) -> BidProfile:
    """One random bid per bidder. Without ``rng`` the sampler seed is used."""
    rng = np.random.default_rng(sampler.seed) if rng is None else rng
    bids = {}
    for b in instance.bidders:
        if is_discrete(b.true_cost):
            opts = tuple((q, q * _u(rng, sampler.block_unit_price)) for q, _ in menu(b.true_cost))
            bids[b.id] = Block(*opts[0]) if isinstance(b.true_cost, Block) else BlockMenu(opts)
        else:
            cap = domain_max(b.true_cost) * _u(rng, sampler.cap_factor)
            bids[b.id] = Quadratic(_u(rng, sampler.a_range), _u(rng, sampler.b_range), cap)
    return BidProfile(bids, label="sampled")


def _random_bid(rng: np.random.Generator, kind: str, cap: float):
    if kind == "block":
        return Block(cap, cap * float(rng.uniform(5.0, 40.0)))
    if kind == "quadratic":
        return Quadratic(float(rng.uniform(0.0, 0.2)), float(rng.uniform(5.0, 40.0)), cap)
    k = int(rng.integers(1, 4))
    cuts = np.sort(rng.uniform(0.0, cap, k - 1))
    qs = [0.0, *map(float, cuts), cap]
    slopes = np.sort(rng.uniform(5.0, 40.0, k))
    pts = [(0.0, 0.0)]
    for (q0, q1), s in zip(zip(qs, qs[1:]), slopes):
        pts.append((q1, pts[-1][1] + float(s) * (q1 - q0)))
    from ..bids import PiecewiseLinear

    return PiecewiseLinear(tuple(pts))


def random_instance(rng: np.random.Generator, n: int, network: str = "single",
                    kinds: Sequence[str] = ("block", "pwl", "quadratic"),
                    limit_range: tuple[float, float] = (20.0, 80.0)) -> MarketInstance:
    """Random feasible market with ``n`` bidders.

    ``network`` is ``"single"`` (one bus) or ``"three"`` (a triangle with
    demand at buses 2 and 3 and random line limits in ``limit_range``).
    Capacities are drawn so that the full market is feasible and removing
    some bidders is not.
    """
    from ..bids import domain_max as _dm  # noqa: F401
    from ..model import Bus

    caps = rng.uniform(20.0, 100.0, n)
    total = float(caps.sum())
    demand = total * float(rng.uniform(0.3, 0.75))
    kinds = list(kinds)
    bids = [_random_bid(rng, kinds[int(rng.integers(len(kinds)))], float(round(c, 3)))
            for c in caps]
    if network == "single":
        net = Network.single_bus(round(demand, 3))
        buses = [0] * n
    elif network == "three":
        share = float(rng.uniform(0.2, 0.8))
        net = Network(
            (Bus(1, 0.0), Bus(2, round(demand * share, 3)), Bus(3, round(demand * (1 - share), 3))),
            tuple(Line(a, b, float(rng.uniform(5.0, 20.0)),
                       float(round(rng.uniform(*limit_range), 3)) if rng.random() < 0.7 else None)
                  for a, b in ((1, 2), (2, 3), (1, 3))),
            reference_bus=1,
        )
        buses = [int(rng.integers(1, 4)) for _ in range(n)]
    else:
        raise ValueError(f"unknown network kind {network!r}")
    bidders = tuple(Bidder(i + 1, buses[i], bids[i]) for i in range(n))
    return MarketInstance(bidders, net, meta={"generator": "random_instance", "network": network})
