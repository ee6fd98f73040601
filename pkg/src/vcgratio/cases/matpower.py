"""Reader for the MATPOWER case text format (DC subset).

Only the ``baseMVA``, ``bus``, ``gen``, ``branch`` and ``gencost`` fields are
used. Reactive, voltage and area data are ignored.
"""
from __future__ import annotations

import re
import warnings

from ..bids import Quadratic
from ..model import Bidder, Bus, Line, MarketInstance, Network


class ParseError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class UnsupportedCost(ValueError):
    """Generator cost model that cannot become a quadratic bid."""


class CaseWarning(UserWarning):
    pass


_FIELD = re.compile(r"mpc\.(\w+)\s*=\s*")


def _strip_comment(line: str) -> str:
    # '%' starts a comment outside quoted strings; case files never quote '%'
    k = line.find("%")
    return line if k < 0 else line[:k]


def _matrices(text: str):
    """Map field name -> (scalar or list of rows, line number)."""
    lines = text.splitlines()
    out: dict = {}
    i = 0
    while i < len(lines):
        raw = _strip_comment(lines[i])
        m = _FIELD.search(raw)
        if not m:
            i += 1
            continue
        name = m.group(1)
        rest = raw[m.end():]
        start_line = i + 1
        if not rest.lstrip().startswith("["):
            val = rest.strip().rstrip(";").strip()
            out[name] = (val, start_line, m.end() + 1)
            i += 1
            continue
        col0 = raw.index("[", m.end()) + 1
        rows: list[list[float]] = []
        cur: list[float] = []
        body = raw[col0:]
        lineno, col_base = i + 1, col0
        closed = False
        while True:
            for tok in re.finditer(r"[^\s,;\]]+|;|\]", body):
                t = tok.group(0)
                if t == "]":
                    closed = True
                    break
                if t == ";":
                    if cur:
                        rows.append(cur)
                    cur = []
                    continue
                try:
                    cur.append(float(t))
                except ValueError:
                    raise ParseError(f"bad number {t!r} in mpc.{name}", lineno,
                                     col_base + tok.start() + 1) from None
            if closed:
                break
            if cur:
                rows.append(cur)
                cur = []
            i += 1
            if i >= len(lines):
                raise ParseError(f"unterminated matrix mpc.{name}", start_line, col0)
            body = _strip_comment(lines[i])
            lineno, col_base = i + 1, 0
        if cur:
            rows.append(cur)
        widths = {len(r) for r in rows}
        if len(widths) > 1:
            raise ParseError(f"ragged rows in mpc.{name}", start_line, col0)
        out[name] = (rows, start_line, col0)
        i += 1
    return out


def _need(fields, name, min_cols):
    if name not in fields:
        raise ParseError(f"missing mpc.{name}", 1, 1)
    rows, line, col = fields[name]
    if not isinstance(rows, list):
        raise ParseError(f"mpc.{name} is not a matrix", line, col)
    for r in rows:
        if len(r) < min_cols:
            raise ParseError(f"mpc.{name} needs at least {min_cols} columns", line, col)
    return rows


def parse_matpower_case(text: str, name: str = "") -> MarketInstance:
    """Build a market instance from MATPOWER case text.

    Bidders are the in-service generators, numbered 1.. in file order, with
    quadratic bids ``c2*P^2 + c1*P`` on ``[0, Pmax]``. Constant cost terms and
    positive ``Pmin`` are dropped; each such change is issued as a
    :class:`CaseWarning` and listed under ``meta["parse_warnings"]``.
    """
    fields = _matrices(text)
    notes: list[str] = []
    base = 100.0
    if "baseMVA" in fields:
        val, line, col = fields["baseMVA"]
        try:
            base = float(val)
        except (TypeError, ValueError):
            raise ParseError("baseMVA is not a number", line, col) from None
    bus_rows = _need(fields, "bus", 3)
    gen_rows = _need(fields, "gen", 10)
    br_rows = _need(fields, "branch", 6)
    cost_rows = _need(fields, "gencost", 4)
    if len(cost_rows) < len(gen_rows):
        raise ParseError("gencost has fewer rows than gen", fields["gencost"][1], 1)
    if len(cost_rows) > len(gen_rows):
        notes.append("reactive gencost rows ignored")

    buses = []
    ref = None
    for r in bus_rows:
        bid = int(r[0])
        buses.append(Bus(bid, float(r[2])))
        if int(r[1]) == 3 and ref is None:
            ref = bid
    lines = []
    taps = 0
    for r in br_rows:
        if len(r) > 10 and r[10] == 0:
            continue
        x = float(r[3])
        if x == 0:
            raise ParseError(f"branch {int(r[0])}-{int(r[1])} has zero reactance",
                             fields["branch"][1], 1)
        if len(r) > 8 and r[8] not in (0.0, 1.0):
            taps += 1
        limit = float(r[5]) if r[5] > 0 else None
        lines.append(Line(int(r[0]), int(r[1]), 1.0 / x, limit))
    if taps:
        notes.append(f"{taps} transformer tap ratios ignored (DC model uses reactance only)")

    bidders = []
    k = 0
    for g, c in zip(gen_rows, cost_rows):
        k += 1
        if g[7] <= 0:
            continue
        model, ncost = int(c[0]), int(c[3])
        if model != 2:
            raise UnsupportedCost(f"generator {k}: cost model {model} is not polynomial")
        coefs = c[4:4 + ncost]
        if len(coefs) < ncost:
            raise ParseError(f"gencost row {k} is shorter than NCOST", fields["gencost"][1], 1)
        coefs = [0.0] * (3 - ncost) + list(coefs) if ncost <= 3 else coefs
        if ncost > 3 and any(coefs[:-3]):
            raise UnsupportedCost(f"generator {k}: polynomial degree {ncost - 1} > 2")
        c2, c1, c0 = coefs[-3:]
        if c0:
            notes.append(f"generator {k}: constant cost {c0:g} dropped so that b(0) = 0")
        pmin, pmax = float(g[9]), float(g[8])
        if pmin > 0:
            notes.append(f"generator {k}: Pmin {pmin:g} relaxed to 0")
        if pmax <= 0:
            notes.append(f"generator {k}: Pmax {pmax:g} <= 0, generator skipped")
            continue
        bidders.append(Bidder(k, int(g[0]), Quadratic(float(c2), float(c1), pmax)))
    net = Network(tuple(buses), tuple(lines), ref, base)
    meta: dict = {"source": name} if name else {}
    if notes:
        meta["parse_warnings"] = notes
    for note in notes:
        warnings.warn(note, CaseWarning, stacklevel=2)
    return MarketInstance(tuple(bidders), net, meta=meta)
