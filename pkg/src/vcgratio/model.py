"""Market data model: buses, lines, bidders, instances and bid profiles.

Instances serialize to a canonical JSON document with the sections
``buses``, ``lines``, ``bidders``, ``d_linear`` and ``meta``. Serialization
is deterministic so that serialize -> parse -> serialize is byte-identical.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Mapping, Optional

import numpy as np

from .bids import BidFunction, bid_from_dict, bid_to_dict, bid_violations

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Bus:
    id: int
    demand: float = 0.0


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    susceptance: float
    limit: Optional[float] = None  # MW; None means unlimited


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...] = ()
    reference_bus: Optional[int] = None
    base_mva: float = 100.0

    @classmethod
    def single_bus(cls, demand: float) -> "Network":
        return cls(buses=(Bus(0, float(demand)),), lines=(), reference_bus=0)

    @property
    def ref(self) -> int:
        return self.buses[0].id if self.reference_bus is None else self.reference_bus

    @property
    def total_demand(self) -> float:
        return float(sum(b.demand for b in self.buses))

    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    def with_demand_scale(self, factor: float) -> "Network":
        return replace(self, buses=tuple(Bus(b.id, b.demand * factor) for b in self.buses))


@dataclass(frozen=True)
class LinearCost:
    """Linear additional cost over allocations (per bidder id) and bus angles."""

    x: Mapping[int, float] = field(default_factory=dict)
    theta: Mapping[int, float] = field(default_factory=dict)

    def is_zero(self) -> bool:
        return not any(self.x.values()) and not any(self.theta.values())


@dataclass(frozen=True)
class Bidder:
    id: int
    bus: int
    true_cost: BidFunction
    supply_type: int = 1
    owner: Optional[int] = None


@dataclass(frozen=True, eq=False)
class MarketInstance:
    bidders: tuple[Bidder, ...]
    network: Network
    d_linear: LinearCost = field(default_factory=LinearCost)
    types: int = 1
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.bidders)

    @property
    def ids(self) -> list[int]:
        return [b.id for b in self.bidders]

    def index_of(self, bidder_id: int) -> int:
        return self._id_pos[bidder_id]

    def bidder(self, bidder_id: int) -> Bidder:
        return self.bidders[self._id_pos[bidder_id]]

    @cached_property
    def _id_pos(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.bidders)}

    def mask_of(self, ids: Iterable[int]) -> int:
        m = 0
        for i in ids:
            m |= 1 << self._id_pos[i]
        return m

    def ids_of(self, mask: int) -> list[int]:
        return [b.id for i, b in enumerate(self.bidders) if mask >> i & 1]

    @property
    def full_mask(self) -> int:
        return (1 << self.n) - 1

    def truthful_profile(self) -> "BidProfile":
        return BidProfile({b.id: b.true_cost for b in self.bidders}, label="truthful")

    @cached_property
    def grid(self) -> "GridModel":
        return GridModel(self.network)

    def __eq__(self, other):
        if not isinstance(other, MarketInstance):
            return NotImplemented
        return dumps_instance(self) == dumps_instance(other)

    __hash__ = object.__hash__


@dataclass(frozen=True)
class BidProfile:
    bids: Mapping[int, BidFunction]
    label: str = ""

    def replace(self, changes: Mapping[int, BidFunction], label: Optional[str] = None) -> "BidProfile":
        bids = dict(self.bids)
        bids.update(changes)
        return BidProfile(bids, self.label if label is None else label)


class GridModel:
    """DC power-flow sensitivities of a network.

    With the reference angle fixed at 0, angles are ``theta = X @ p`` for the
    vector ``p`` of net bus injections (MW), and line flows are
    ``ptdf @ p``. Both matrices act on the full bus vector; the reference
    column is zero.
    """

    def __init__(self, network: Network):
        buses = network.buses
        self.bus_pos = network.bus_index()
        nb = len(buses)
        ref = self.bus_pos[network.ref]
        B = np.zeros((nb, nb))
        nl = len(network.lines)
        inc = np.zeros((nl, nb))
        bvec = np.zeros(nl)
        for k, ln in enumerate(network.lines):
            i, j = self.bus_pos[ln.from_bus], self.bus_pos[ln.to_bus]
            w = ln.susceptance * network.base_mva
            B[i, i] += w
            B[j, j] += w
            B[i, j] -= w
            B[j, i] -= w
            inc[k, i], inc[k, j] = 1.0, -1.0
            bvec[k] = w
        keep = [i for i in range(nb) if i != ref]
        X = np.zeros((nb, nb))
        if keep:
            X[np.ix_(keep, keep)] = np.linalg.inv(B[np.ix_(keep, keep)])
        self.X = X
        self.ptdf = (bvec[:, None] * inc) @ X
        self.demand = np.array([b.demand for b in buses], dtype=float)
        self.limits = np.array([np.inf if ln.limit is None else ln.limit for ln in network.lines])
        self.limited = np.flatnonzero(np.isfinite(self.limits))


# ---------------------------------------------------------------- validation


def validate(instance: MarketInstance) -> list[str]:
    """Every invariant violation of ``instance`` as a ``path: message`` string.

    An empty list means the instance is valid.
    """
    out: list[str] = []
    net = instance.network
    bus_ids = [b.id for b in net.buses]
    if not bus_ids:
        out.append("network.buses: no buses")
        return out
    if len(set(bus_ids)) != len(bus_ids):
        out.append("network.buses: duplicate bus id")
    known = set(bus_ids)
    if net.reference_bus is not None and net.reference_bus not in known:
        out.append(f"network.reference_bus: unknown bus {net.reference_bus}")
    for i, b in enumerate(net.buses):
        if not b.demand >= 0 or not math.isfinite(b.demand):
            out.append(f"network.buses[{i}]: demand must be finite and >= 0")
    adj: dict[int, set[int]] = {b: set() for b in known}
    for k, ln in enumerate(net.lines):
        path = f"network.lines[{k}]"
        if ln.from_bus not in known or ln.to_bus not in known:
            out.append(f"{path}: unknown bus")
            continue
        if ln.from_bus == ln.to_bus:
            out.append(f"{path}: self loop")
        if not ln.susceptance > 0:
            out.append(f"{path}: susceptance must be positive")
        if ln.limit is not None and not ln.limit > 0:
            out.append(f"{path}: limit must be positive")
        adj[ln.from_bus].add(ln.to_bus)
        adj[ln.to_bus].add(ln.from_bus)
    seen = {bus_ids[0]}
    stack = [bus_ids[0]]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if seen != known:
        out.append("network: graph is not connected")
    ids = [b.id for b in instance.bidders]
    if len(set(ids)) != len(ids):
        out.append("bidders: duplicate bidder id")
    if instance.types < 1:
        out.append("types: must be >= 1")
    for i, b in enumerate(instance.bidders):
        path = f"bidders[{i}]"
        if b.bus not in known:
            out.append(f"{path}: bidder on nonexistent bus {b.bus}")
        if not 1 <= b.supply_type <= instance.types:
            out.append(f"{path}: supply type {b.supply_type} outside 1..{instance.types}")
        out.extend(bid_violations(b.true_cost, f"{path}.true_cost"))
    for bid in instance.d_linear.x:
        if bid not in instance._id_pos:
            out.append(f"d_linear.x: unknown bidder {bid}")
    for bus in instance.d_linear.theta:
        if bus not in known:
            out.append(f"d_linear.theta: unknown bus {bus}")
    return out


def validate_profile(instance: MarketInstance, profile: BidProfile) -> list[str]:
    out = []
    for b in instance.bidders:
        if b.id not in profile.bids:
            out.append(f"bids: missing bid for bidder {b.id}")
    for bid_id, f in profile.bids.items():
        if bid_id not in instance._id_pos:
            out.append(f"bids[{bid_id}]: unknown bidder")
        out.extend(bid_violations(f, f"bids[{bid_id}]"))
    return out


# ------------------------------------------------------------- serialization


def instance_to_dict(instance: MarketInstance) -> dict:
    net = instance.network
    return {
        "schema": SCHEMA_VERSION,
        "buses": [{"id": b.id, "demand": b.demand} for b in net.buses],
        "lines": [
            {"from": ln.from_bus, "to": ln.to_bus, "susceptance": ln.susceptance, "limit": ln.limit}
            for ln in net.lines
        ],
        "reference_bus": net.ref,
        "base_mva": net.base_mva,
        "types": instance.types,
        "bidders": [
            {
                "id": b.id,
                "bus": b.bus,
                "type": b.supply_type,
                "owner": b.owner,
                "true_cost": bid_to_dict(b.true_cost),
            }
            for b in instance.bidders
        ],
        "d_linear": {
            "x": {str(k): v for k, v in sorted(instance.d_linear.x.items())},
            "theta": {str(k): v for k, v in sorted(instance.d_linear.theta.items())},
        },
        "meta": instance.meta,
    }


def instance_from_dict(d: dict) -> MarketInstance:
    buses = tuple(Bus(int(b["id"]), float(b["demand"])) for b in d["buses"])
    lines = tuple(
        Line(int(ln["from"]), int(ln["to"]), float(ln["susceptance"]),
             None if ln.get("limit") is None else float(ln["limit"]))
        for ln in d.get("lines", [])
    )
    net = Network(buses, lines, d.get("reference_bus"), float(d.get("base_mva", 100.0)))
    bidders = tuple(
        Bidder(int(b["id"]), int(b["bus"]), bid_from_dict(b["true_cost"]),
               int(b.get("type", 1)), b.get("owner"))
        for b in d["bidders"]
    )
    dl = d.get("d_linear") or {}
    cost = LinearCost({int(k): float(v) for k, v in (dl.get("x") or {}).items()},
                      {int(k): float(v) for k, v in (dl.get("theta") or {}).items()})
    return MarketInstance(bidders, net, cost, int(d.get("types", 1)), dict(d.get("meta") or {}))


def dumps_instance(instance: MarketInstance) -> str:
    return json.dumps(instance_to_dict(instance), indent=2) + "\n"


def loads_instance(text: str) -> MarketInstance:
    return instance_from_dict(json.loads(text))


def instance_digest(instance: MarketInstance) -> str:
    return hashlib.sha256(dumps_instance(instance).encode()).hexdigest()


def profile_to_dict(profile: BidProfile) -> dict:
    return {
        "label": profile.label,
        "bids": {str(k): bid_to_dict(v) for k, v in sorted(profile.bids.items())},
    }


def profile_from_dict(d: dict) -> BidProfile:
    return BidProfile({int(k): bid_from_dict(v) for k, v in d["bids"].items()}, d.get("label", ""))


def dumps_profile(profile: BidProfile) -> str:
    return json.dumps(profile_to_dict(profile), indent=2) + "\n"


def loads_profile(text: str) -> BidProfile:
    return profile_from_dict(json.loads(text))
