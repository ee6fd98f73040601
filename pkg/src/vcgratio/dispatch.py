"""Economic dispatch: the market objective J for a set of active bidders.

Continuous bids become fill-in-order segment variables of one convex QP
under the DC power-flow model (angles eliminated through PTDFs, reference
angle 0). Block and block-menu bids are branched on; each node relaxes the
unfixed blocks to the lower convex envelope of their menu, which is a valid
lower bound, and every leaf is a fixed acceptance pattern solved exactly.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import bids as bidmod
from .model import BidProfile, MarketInstance
from .qp import NumericalFailure, solve_qp
from .setfunc import ObjectiveOracle

__all__ = ["DispatchResult", "DispatchConfig", "solve", "make_oracle", "NumericalFailure"]


@dataclass(frozen=True)
class DispatchConfig:
    tol: float = 1e-9
    tie_break: bool = True
    block_method: str = "bnb"  # or "enumerate"


@dataclass(frozen=True)
class DispatchResult:
    status: str  # "optimal" | "infeasible"
    objective: float
    allocation: Mapping[int, float] = field(default_factory=dict)
    angles: Mapping[int, float] = field(default_factory=dict)
    flows: tuple = ()
    duality_gap: float = 0.0
    block_pattern: frozenset = frozenset()
    d_cost: float = 0.0
    balance_residual: float = 0.0
    flow_violation: float = 0.0
    nodes: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


INFEASIBLE = DispatchResult("infeasible", math.inf)


def _lower_hull(points: list[tuple[float, float]]) -> list[tuple[float, float]]:
    pts = sorted(set(points))
    hull: list[tuple[float, float]] = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) <= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    return hull


class _Builder:
    """Assembles QP data for one acceptance pattern of the active bidders."""

    def __init__(self, instance: MarketInstance, profile: BidProfile, active: Sequence[int],
                 tol: float):
        self.inst = instance
        self.grid = instance.grid
        self.tol = tol
        self.active = list(active)
        self.bids = {i: profile.bids[instance.bidders[i].id] for i in self.active}
        self.disc = [i for i in self.active if bidmod.is_discrete(self.bids[i])]
        self.cont = [i for i in self.active if i not in set(self.disc)]
        self.bus_of = {i: self.grid.bus_pos[instance.bidders[i].bus] for i in self.active}
        rank = {bid: r for r, bid in enumerate(sorted(instance.ids))}
        self.weight = {i: 1.0 + rank[instance.bidders[i].id] for i in self.active}
        self.hulls = {i: _lower_hull([(0.0, 0.0)] + bidmod.menu(self.bids[i])) for i in self.disc}
        dl = instance.d_linear
        self.dx = {i: float(dl.x.get(instance.bidders[i].id, 0.0)) for i in self.active}
        dth = np.zeros(len(instance.network.buses))
        for bus, v in dl.theta.items():
            dth[self.grid.bus_pos[bus]] = v
        self.dtheta = dth
        self.theta_coef = self.grid.X.T @ dth  # d/dP of dtheta . theta

    def build(self, fixed: Mapping[int, float], relaxed: Iterable[int]):
        grid = self.grid
        relaxed = list(relaxed)
        h, c, ub, owner, w = [], [], [], [], []
        for i in self.cont:
            for length, m0, m1 in bidmod.segments(self.bids[i]):
                h.append((m1 - m0) / length)
                c.append(m0)
                ub.append(length)
                owner.append(i)
        for i in relaxed:
            hull = self.hulls[i]
            for (q0, p0), (q1, p1) in zip(hull, hull[1:]):
                h.append(0.0)
                c.append((p1 - p0) / (q1 - q0))
                ub.append(q1 - q0)
                owner.append(i)
        h, c, ub = np.array(h), np.array(c), np.array(ub)
        owner = np.array(owner, dtype=int)
        nb = len(self.inst.network.buses)
        inj = np.zeros(nb)
        const = 0.0
        for i, q in fixed.items():
            inj[self.bus_of[i]] += q
            const += self._menu_price(i, q) + self.dx[i] * q
        net = inj - grid.demand
        const += float(self.dtheta @ (grid.X @ net))
        buses = np.array([self.bus_of[i] for i in owner], dtype=int)
        for k, i in enumerate(owner):
            c[k] += self.dx[i] + self.theta_coef[buses[k]]
        A = np.ones((1, owner.size))
        b = np.array([grid.demand.sum() - inj.sum()])
        lim = grid.limited
        if lim.size:
            P = grid.ptdf[lim][:, buses] if owner.size else np.zeros((lim.size, 0))
            base = grid.ptdf[lim] @ net
            G = np.vstack([P, -P])
            g = np.concatenate([grid.limits[lim] - base, grid.limits[lim] + base])
        else:
            G, g = np.zeros((0, owner.size)), np.zeros(0)
        return h, c, A, b, G, g, ub, owner, const

    def _menu_price(self, i: int, q: float) -> float:
        if q == 0.0:
            return 0.0
        return bidmod.eval_bid(self.bids[i], q)

    def solve_pattern(self, fixed: Mapping[int, float], relaxed: Sequence[int] = (),
                      tie_break: bool = False):
        h, c, A, b, G, g, ub, owner, const = self.build(fixed, relaxed)
        res = solve_qp(h, c, A, b, G, g, np.zeros(c.size), ub, tol=self.tol)
        if res.status != "optimal":
            return None
        x = res.x
        if tie_break and not res.unique and c.size:
            x = self._tie_break(h, c, A, b, G, g, ub, owner, x)
        return res.objective + const, res.gap, x, owner

    def _tie_break(self, h, c, A, b, G, g, ub, owner, x):
        # optimal face of a diagonal convex QP: h*x and c@x are constant on it
        lb2, ub2 = np.zeros(c.size), ub.copy()
        pin = h > 0
        lb2[pin] = ub2[pin] = x[pin]
        G2 = np.vstack([G, c[None, :]])
        g2 = np.concatenate([g, [c @ x]])
        wvec = np.array([self.weight[i] for i in owner])
        res = solve_qp(None, wvec, A, b, G2, g2, lb2, ub2, x0=x, tol=self.tol)
        if res.status != "optimal":
            return x
        return res.x

    def result(self, objective, gap, x, owner, fixed) -> DispatchResult:
        grid = self.grid
        alloc = {self.inst.bidders[i].id: 0.0 for i in self.active}
        nb = len(self.inst.network.buses)
        inj = np.zeros(nb)
        for k, i in enumerate(owner):
            alloc[self.inst.bidders[i].id] += float(x[k])
        for i, q in fixed.items():
            alloc[self.inst.bidders[i].id] += q
        d_cost = 0.0
        for i in self.active:
            q = alloc[self.inst.bidders[i].id]
            inj[self.bus_of[i]] += q
            d_cost += self.dx[i] * q
        net = inj - grid.demand
        theta = grid.X @ net
        d_cost += float(self.dtheta @ theta)
        flows = grid.ptdf @ net
        over = np.abs(flows) - grid.limits
        fv = float(np.max(over, initial=0.0)) if over.size else 0.0
        pattern = frozenset((self.inst.bidders[i].id, q) for i, q in fixed.items() if q > 0)
        return DispatchResult(
            "optimal", float(objective), alloc,
            {b.id: float(theta[k]) for k, b in enumerate(self.inst.network.buses)},
            tuple(float(f) for f in flows), float(gap), pattern, d_cost,
            float(abs(net.sum())), max(fv, 0.0),
        )


def _snap(hull, q, tol):
    for qq, _ in hull:
        if abs(q - qq) <= tol * max(1.0, qq):
            return qq
    return None


def solve(instance: MarketInstance, profile: BidProfile, active: Optional[Iterable[int]] = None,
          config: DispatchConfig = DispatchConfig()) -> DispatchResult:
    """Minimum-cost dispatch using only the bidders with ids in ``active``.

    ``active=None`` means every bidder. Infeasibility returns a result with
    ``status == "infeasible"`` and ``objective == inf``; solver breakdown
    raises :class:`NumericalFailure`.
    """
    if active is None:
        pos = list(range(instance.n))
    else:
        pos = sorted(instance.index_of(i) for i in active)
    return _solve_positions(instance, profile, pos, config)


def _solve_positions(instance, profile, pos, config: DispatchConfig) -> DispatchResult:
    bld = _Builder(instance, profile, pos, config.tol)
    if not bld.disc:
        out = bld.solve_pattern({}, (), config.tie_break)
        if out is None:
            return INFEASIBLE
        obj, gap, x, owner = out
        return bld.result(obj, gap, x, owner, {})
    if config.block_method == "enumerate":
        return _enumerate(bld, config)
    return _branch_and_bound(bld, config)


def _enumerate(bld: _Builder, config: DispatchConfig) -> DispatchResult:
    best = None
    nodes = 0
    choices = [[0.0] + bidmod.quantities(bld.bids[i]) for i in bld.disc]
    for combo in itertools.product(*choices):
        fixed = dict(zip(bld.disc, combo))
        out = bld.solve_pattern(fixed, (), False)
        nodes += 1
        if out is not None and (best is None or out[0] < best[0]):
            best = (out[0], fixed)
    if best is None:
        return DispatchResult("infeasible", math.inf, nodes=nodes)
    obj, gap, x, owner = bld.solve_pattern(best[1], (), config.tie_break)
    res = bld.result(obj, gap, x, owner, best[1])
    return _with_nodes(res, nodes)


def _with_nodes(res: DispatchResult, nodes: int) -> DispatchResult:
    return DispatchResult(res.status, res.objective, res.allocation, res.angles, res.flows,
                          res.duality_gap, res.block_pattern, res.d_cost, res.balance_residual,
                          res.flow_violation, nodes)


def _branch_and_bound(bld: _Builder, config: DispatchConfig) -> DispatchResult:
    best = math.inf
    leaves: list[tuple[float, dict]] = []
    stack: list[dict] = [{}]
    nodes = 0
    while stack:
        fixed = stack.pop()
        relaxed = [i for i in bld.disc if i not in fixed]
        out = bld.solve_pattern(fixed, relaxed, False)
        nodes += 1
        if out is None:
            continue
        obj, _, x, owner = out
        if obj > best + _tie_tol(best):
            continue
        branch = None
        leaf = dict(fixed)
        for i in relaxed:
            q = float(x[owner == i].sum())
            snapped = _snap(bld.hulls[i], q, 1e-9)
            if snapped is None:
                branch = i
                break
            leaf[i] = snapped
        if branch is None:
            leaves.append((obj, leaf))
            best = min(best, obj)
            continue
        for q in [0.0] + bidmod.quantities(bld.bids[branch]):
            child = dict(fixed)
            child[branch] = q
            stack.append(child)
    if not leaves:
        return DispatchResult("infeasible", math.inf, nodes=nodes)
    tied = [leaf for obj, leaf in leaves if obj <= best + _tie_tol(best)]
    chosen = None
    for leaf in tied:
        out = bld.solve_pattern(leaf, (), config.tie_break)
        if out is None:
            continue
        obj, gap, x, owner = out
        res = bld.result(obj, gap, x, owner, leaf)
        key = (sum(bld.weight[i] * res.allocation[bld.inst.bidders[i].id] for i in bld.active),)
        if chosen is None or key < chosen[0]:
            chosen = (key, res)
    if chosen is None:
        raise NumericalFailure("branch-and-bound leaf failed to re-solve")
    return _with_nodes(chosen[1], nodes)


def _tie_tol(value: float) -> float:
    if not math.isfinite(value):
        return 0.0
    return 1e-11 * (1.0 + abs(value))


def make_oracle(instance: MarketInstance, profile: BidProfile,
                players: Optional[Sequence[int]] = None,
                config: DispatchConfig = DispatchConfig()) -> ObjectiveOracle:
    """Memoized set function ``S -> J(B_S)`` over ``players`` (bidder ids).

    Bidders outside ``players`` stay active in every evaluation, which
    restricts the market objective to a sub-market of manageable size.
    """
    players = list(instance.ids if players is None else players)
    ppos = [instance.index_of(i) for i in players]
    always = sorted(set(range(instance.n)) - set(ppos))
    cfg = DispatchConfig(config.tol, False, config.block_method)

    def evaluate(mask: int) -> float:
        pos = sorted(always + [p for k, p in enumerate(ppos) if mask >> k & 1])
        return _solve_positions(instance, profile, pos, cfg).objective

    return ObjectiveOracle(evaluate, len(players), labels=players)
