"""Bid and cost curves offered to the operator.

Every curve is defined on a quantity domain containing 0 and satisfies
``f(0) == 0``. Continuous curves (piecewise linear, quadratic, piecewise
quadratic) are convex and are handed to the dispatch as a list of
fill-in-order segments. Discrete curves (single blocks and block menus) are
accepted all-or-nothing at one of their listed quantities.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Union

#: Relative slack allowed when a dispatch quantity sits on a domain edge.
DOMAIN_TOL = 1e-7


class DomainError(ValueError):
    """Quantity outside the domain of a bid function."""


@dataclass(frozen=True)
class Block:
    """All-or-nothing offer of ``quantity`` MW for a total of ``price`` $."""

    quantity: float
    price: float


@dataclass(frozen=True)
class BlockMenu:
    """Choice of at most one option ``(quantity, price)`` from a menu.

    Produced by merging several blocks of one owner. A single-option menu
    behaves exactly like :class:`Block`.
    """

    options: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class PiecewiseLinear:
    """Convex piecewise-linear curve through ``breakpoints`` starting at (0, 0)."""

    breakpoints: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class Quadratic:
    """``a*q**2 + b*q`` on ``[0, cap]``."""

    a: float
    b: float
    cap: float


@dataclass(frozen=True)
class PiecewiseQuadratic:
    """Convex curve given by consecutive segments ``(length, m_start, m_end)``.

    The marginal price rises linearly from ``m_start`` to ``m_end`` across a
    segment. This is the exact form of a merged set of quadratic and
    piecewise-linear bids.
    """

    segments: tuple[tuple[float, float, float], ...]


BidFunction = Union[Block, BlockMenu, PiecewiseLinear, Quadratic, PiecewiseQuadratic]


def is_discrete(f: BidFunction) -> bool:
    return isinstance(f, (Block, BlockMenu))


def menu(f: BidFunction) -> list[tuple[float, float]]:
    """Nonzero options of a discrete bid, sorted by quantity."""
    if isinstance(f, Block):
        return [(float(f.quantity), float(f.price))]
    if isinstance(f, BlockMenu):
        return sorted((float(q), float(p)) for q, p in f.options)
    raise TypeError(f"{type(f).__name__} is not a discrete bid")


def segments(f: BidFunction) -> list[tuple[float, float, float]]:
    """Fill-in-order segments ``(length, m_start, m_end)`` of a continuous bid."""
    if isinstance(f, Quadratic):
        return [(float(f.cap), float(f.b), float(f.b + 2.0 * f.a * f.cap))]
    if isinstance(f, PiecewiseLinear):
        out = []
        pts = f.breakpoints
        for (q0, p0), (q1, p1) in zip(pts, pts[1:]):
            slope = (p1 - p0) / (q1 - q0)
            out.append((float(q1 - q0), slope, slope))
        return out
    if isinstance(f, PiecewiseQuadratic):
        return [(float(n), float(m0), float(m1)) for n, m0, m1 in f.segments]
    raise TypeError(f"{type(f).__name__} is not a continuous bid")


def domain_max(f: BidFunction) -> float:
    if isinstance(f, Quadratic):
        return float(f.cap)
    if isinstance(f, PiecewiseLinear):
        return float(f.breakpoints[-1][0])
    if isinstance(f, PiecewiseQuadratic):
        return float(sum(s[0] for s in f.segments))
    return max(q for q, _ in menu(f))


def quantities(f: BidFunction) -> list[float]:
    """Feasible nonzero quantities of a discrete bid (with 0 always allowed)."""
    return [q for q, _ in menu(f)]


def _segment_cost(length: float, m0: float, m1: float, s: float) -> float:
    return m0 * s + 0.5 * (m1 - m0) / length * s * s


def eval_bid(f: BidFunction, q: float) -> float:
    """Cost of supplying ``q`` MW under bid ``f``.

    Quantities within ``DOMAIN_TOL`` (relative) of a domain edge or block
    quantity are snapped onto it; anything further away raises
    :class:`DomainError`.
    """
    q = float(q)
    if is_discrete(f):
        opts = menu(f)
        if abs(q) <= DOMAIN_TOL:
            return 0.0
        for qq, pp in opts:
            if abs(q - qq) <= DOMAIN_TOL * max(1.0, qq):
                return pp
        raise DomainError(f"quantity {q} not offered by {f}")
    top = domain_max(f)
    if q < -DOMAIN_TOL or q > top + DOMAIN_TOL * max(1.0, top):
        raise DomainError(f"quantity {q} outside [0, {top}]")
    q = min(max(q, 0.0), top)
    if isinstance(f, Quadratic):
        return f.a * q * q + f.b * q
    if isinstance(f, PiecewiseLinear):
        xs = [p[0] for p in f.breakpoints]
        i = bisect.bisect_right(xs, q) - 1
        if i >= len(xs) - 1:
            return float(f.breakpoints[-1][1])
        (q0, p0), (q1, p1) = f.breakpoints[i], f.breakpoints[i + 1]
        return p0 + (p1 - p0) * (q - q0) / (q1 - q0)
    total = 0.0
    rest = q
    for length, m0, m1 in segments(f):
        s = min(rest, length)
        total += _segment_cost(length, m0, m1, s)
        rest -= s
        if rest <= 0.0:
            break
    return total


def scale_prices(f: BidFunction, factor: float) -> BidFunction:
    """Same quantity domain, every price multiplied by ``factor``."""
    if isinstance(f, Block):
        return Block(f.quantity, f.price * factor)
    if isinstance(f, BlockMenu):
        return BlockMenu(tuple((q, p * factor) for q, p in f.options))
    if isinstance(f, Quadratic):
        return Quadratic(f.a * factor, f.b * factor, f.cap)
    if isinstance(f, PiecewiseLinear):
        return PiecewiseLinear(tuple((q, p * factor) for q, p in f.breakpoints))
    return PiecewiseQuadratic(tuple((n, m0 * factor, m1 * factor) for n, m0, m1 in f.segments))


def zero_bid(f: BidFunction) -> BidFunction:
    """Bid of price zero everywhere on the domain of ``f``."""
    return scale_prices(f, 0.0)


def truncate(f: BidFunction, cap: float) -> BidFunction:
    """Restrict a continuous bid to ``[0, cap]`` (withholding capacity)."""
    if is_discrete(f):
        raise TypeError("blocks cannot be truncated")
    cap = min(float(cap), domain_max(f))
    if cap <= 0:
        raise DomainError("truncated capacity must be positive")
    if isinstance(f, Quadratic):
        return Quadratic(f.a, f.b, cap)
    out = []
    rest = cap
    for length, m0, m1 in segments(f):
        if rest <= 0:
            break
        s = min(length, rest)
        out.append((s, m0, m0 + (m1 - m0) * s / length))
        rest -= s
    if isinstance(f, PiecewiseLinear):
        pts = [(0.0, 0.0)]
        for s, m0, _ in out:
            pts.append((pts[-1][0] + s, pts[-1][1] + m0 * s))
        return PiecewiseLinear(tuple(pts))
    return PiecewiseQuadratic(tuple(out))


def bid_violations(f: BidFunction, path: str = "bid") -> list[str]:
    """Invariant violations of one bid, each prefixed with ``path``."""
    out: list[str] = []
    if isinstance(f, Block):
        if not f.quantity > 0:
            out.append(f"{path}: block quantity must be positive")
        if f.price < 0:
            out.append(f"{path}: negative block price")
    elif isinstance(f, BlockMenu):
        if not f.options:
            out.append(f"{path}: empty block menu")
        qs = [q for q, _ in f.options]
        if len(set(qs)) != len(qs):
            out.append(f"{path}: duplicate menu quantity")
        for q, p in f.options:
            if not q > 0 or p < 0:
                out.append(f"{path}: menu option ({q}, {p}) must have q > 0, price >= 0")
    elif isinstance(f, Quadratic):
        if f.a < 0 or f.b < 0:
            out.append(f"{path}: quadratic coefficients must be nonnegative")
        if not f.cap > 0:
            out.append(f"{path}: quadratic cap must be positive")
    elif isinstance(f, PiecewiseLinear):
        pts = f.breakpoints
        if len(pts) < 2 or tuple(pts[0]) != (0.0, 0.0):
            out.append(f"{path}: breakpoints must start at (0, 0)")
        slopes = []
        for (q0, p0), (q1, p1) in zip(pts, pts[1:]):
            if not q1 > q0:
                out.append(f"{path}: breakpoint quantities must strictly increase")
                return out
            if p1 < p0:
                out.append(f"{path}: breakpoint prices must not decrease")
            slopes.append((p1 - p0) / (q1 - q0))
        if any(s1 < s0 - 1e-12 * max(1.0, abs(s0)) for s0, s1 in zip(slopes, slopes[1:])):
            out.append(f"{path}: non-convex bid (decreasing marginal price)")
    elif isinstance(f, PiecewiseQuadratic):
        prev = 0.0
        if not f.segments:
            out.append(f"{path}: no segments")
        for n, m0, m1 in f.segments:
            if not n > 0:
                out.append(f"{path}: segment length must be positive")
            if m0 < 0 or m1 < m0 - 1e-12 or m0 < prev - 1e-9 * max(1.0, abs(prev)):
                out.append(f"{path}: non-convex bid (decreasing marginal price)")
            prev = m1
    else:
        out.append(f"{path}: unknown bid type {type(f).__name__}")
    return out


def bid_to_dict(f: BidFunction) -> dict:
    if isinstance(f, Block):
        return {"kind": "block", "quantity": f.quantity, "price": f.price}
    if isinstance(f, BlockMenu):
        return {"kind": "block_menu", "options": [list(o) for o in f.options]}
    if isinstance(f, Quadratic):
        return {"kind": "quadratic", "a": f.a, "b": f.b, "cap": f.cap}
    if isinstance(f, PiecewiseLinear):
        return {"kind": "pwl", "breakpoints": [list(p) for p in f.breakpoints]}
    return {"kind": "pwq", "segments": [list(s) for s in f.segments]}


def bid_from_dict(d: dict) -> BidFunction:
    kind = d.get("kind")
    if kind == "block":
        return Block(float(d["quantity"]), float(d["price"]))
    if kind == "block_menu":
        return BlockMenu(tuple((float(q), float(p)) for q, p in d["options"]))
    if kind == "quadratic":
        return Quadratic(float(d["a"]), float(d["b"]), float(d["cap"]))
    if kind == "pwl":
        return PiecewiseLinear(tuple((float(q), float(p)) for q, p in d["breakpoints"]))
    if kind == "pwq":
        return PiecewiseQuadratic(tuple((float(n), float(a), float(b)) for n, a, b in d["segments"]))
    raise ValueError(f"unknown bid kind {kind!r}")
