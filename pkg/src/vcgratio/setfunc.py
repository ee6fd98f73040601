"""Set-function analytics over the market objective ``S -> J(B_S)``.

The supermodularity ratio of a nonincreasing set function ``J`` on ``2^L``
is the largest ``gamma`` with::

    gamma * sum_{l in K} [J(S - l) - J(S)] <= J(S - K) - J(S)   for all K <= S <= L

Pairs whose ``S`` or ``S - K`` is infeasible are ignored, ``0/0`` pairs
hold for every gamma, and pairs with a positive numerator over a zero
denominator impose nothing on a lower bound. Differences at or below the
zero tolerance (numerator, denominator, and their gap) count as zero. With those conventions
``gamma`` lies in ``[0, 1]``, equals 1 exactly for supermodular ``J`` and is
at least ``1 / k_feas``.
"""
from __future__ import annotations

import itertools
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional, Sequence

import numpy as np

from . import kernels

log = logging.getLogger(__name__)


class CapExceeded(ValueError):
    """Exhaustive enumeration requested above the configured player cap."""


class BudgetExceeded(RuntimeError):
    """Constraint generation ran out of iterations.

    ``report`` holds the best-so-far estimate, flagged as an upper estimate.
    """

    def __init__(self, message: str, report: "RatioReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class RatioConfig:
    tol_ratio: float = 1e-9
    exhaustive_cap: int = 12
    max_iterations: int = 10_000
    sample_pairs: int = 2000
    witness_limit: int = 16
    seed: int = 0


@dataclass(frozen=True)
class BidderSet:
    """Subset of ``n`` players stored as a bitmask (bit ``i`` = player ``i``)."""

    mask: int
    n: int

    @classmethod
    def full(cls, n: int) -> "BidderSet":
        return cls((1 << n) - 1, n)

    @classmethod
    def of(cls, members: Iterable[int], n: int) -> "BidderSet":
        m = 0
        for i in members:
            if not 0 <= i < n:
                raise ValueError(f"player index {i} outside 0..{n - 1}")
            m |= 1 << i
        return cls(m, n)

    def members(self) -> list[int]:
        return [i for i in range(self.n) if self.mask >> i & 1]

    def labels(self, labels: Sequence) -> list:
        return [labels[i] for i in self.members()]

    def without(self, other: "BidderSet | int") -> "BidderSet":
        m = other.mask if isinstance(other, BidderSet) else 1 << other
        return BidderSet(self.mask & ~m, self.n)

    def issubset(self, other: "BidderSet") -> bool:
        return self.mask & ~other.mask == 0

    def __contains__(self, i: int) -> bool:
        return bool(self.mask >> i & 1)

    def __len__(self) -> int:
        return bin(self.mask).count("1")

    def __iter__(self):
        return iter(self.members())


def _mask(S) -> int:
    return S.mask if isinstance(S, BidderSet) else int(S)


class ObjectiveOracle:
    """Memoized, thread-safe evaluation of ``J`` on bitmasks over ``n`` players.

    ``labels[i]`` names player ``i`` (bidder ids for market oracles).
    """

    def __init__(self, fn: Callable[[int], float], n: int, labels: Optional[Sequence] = None):
        self._fn = fn
        self.n = n
        self.labels = list(range(n)) if labels is None else list(labels)
        self._cache: dict[int, float] = {}
        self._lock = threading.Lock()
        self.eval_count = 0

    def evaluate(self, S) -> float:
        m = _mask(S)
        with self._lock:
            if m in self._cache:
                return self._cache[m]
        v = float(self._fn(m))
        with self._lock:
            if m not in self._cache:
                self._cache[m] = v
                self.eval_count += 1
            return self._cache[m]

    @property
    def cache(self) -> dict[int, float]:
        with self._lock:
            return dict(self._cache)

    def seed_value(self, S, value: float) -> None:
        with self._lock:
            self._cache.setdefault(_mask(S), float(value))

    def table(self, workers: int = 1) -> np.ndarray:
        """Dense ``2^n`` table. Subsets of an infeasible set are marked
        infeasible without solving (``J`` is nonincreasing)."""
        n = self.n
        size = 1 << n
        out = np.empty(size)
        by_level: dict[int, list[int]] = {}
        for m in range(size):
            by_level.setdefault(bin(m).count("1"), []).append(m)
        for level in range(n, -1, -1):
            todo = []
            for m in by_level.get(level, []):
                cached = self._cache.get(m)
                if cached is not None:
                    out[m] = cached
                    continue
                dead = False
                for i in range(n):
                    if not m >> i & 1 and out[m | 1 << i] == math.inf:
                        dead = True
                        break
                if dead:
                    out[m] = math.inf
                    self.seed_value(m, math.inf)
                else:
                    todo.append(m)
            if workers > 1 and len(todo) > 1:
                from concurrent.futures import ThreadPoolExecutor

                with ThreadPoolExecutor(workers) as pool:
                    vals = list(pool.map(self.evaluate, todo))
            else:
                vals = [self.evaluate(m) for m in todo]
            for m, v in zip(todo, vals):
                out[m] = v
        return out

    def check_monotone(self, tol: float) -> list[tuple[int, int]]:
        """Cached pairs ``S <= R`` with ``J(R) > J(S) + tol``."""
        items = self.cache
        bad = []
        for s, js in items.items():
            for r, jr in items.items():
                if s != r and s & ~r == 0 and jr > js + tol:
                    bad.append((s, r))
        return bad


@dataclass(frozen=True)
class RatioWitness:
    S: BidderSet
    K: BidderSet
    numerator: float
    denominator: float

    @property
    def ratio(self) -> float:
        return self.numerator / self.denominator


@dataclass(frozen=True)
class RatioReport:
    gamma: float
    witnesses: tuple = ()
    method: str = "exhaustive"
    k_feas: int = 0
    evaluations_used: int = 0
    upper_estimate: bool = False
    iterations: int = 0
    per_profile: tuple = ()
    labels: tuple = ()
    kfeas_exact: bool = True

    @property
    def lower_bound(self) -> float:
        return 1.0 / self.k_feas if self.k_feas >= 1 else 1.0

    def to_dict(self) -> dict:
        labels = list(self.labels) or list(range(64))
        return {
            "gamma": self.gamma,
            "method": self.method,
            "k_feas": self.k_feas,
            "k_feas_exact": self.kfeas_exact,
            "lower_bound": self.lower_bound,
            "upper_estimate": self.upper_estimate,
            "evaluations_used": self.evaluations_used,
            "iterations": self.iterations,
            "per_profile": list(self.per_profile),
            "witnesses": [
                {"S": w.S.labels(labels), "K": w.K.labels(labels), "numerator": w.numerator,
                 "denominator": w.denominator, "ratio": w.ratio}
                for w in self.witnesses
            ],
        }


class SupermodularCheck(NamedTuple):
    is_supermodular: bool
    counterexample: Optional[tuple[BidderSet, BidderSet, int]]


def zero_tolerance(table: np.ndarray, tol_ratio: float) -> float:
    fin = table[np.isfinite(table)]
    return tol_ratio * (1.0 + (float(np.abs(fin).max()) if fin.size else 0.0))


def _players(oracle: ObjectiveOracle, L) -> list[int]:
    if L is None:
        return list(range(oracle.n))
    return BidderSet(_mask(L), oracle.n).members()


def _table(oracle: ObjectiveOracle, L, cfg: RatioConfig, workers: int = 1):
    players = _players(oracle, L)
    if len(players) > cfg.exhaustive_cap:
        raise CapExceeded(f"{len(players)} players exceed exhaustive cap {cfg.exhaustive_cap}")
    if len(players) == oracle.n:
        return oracle.table(workers), players
    sub = ObjectiveOracle(lambda m: oracle.evaluate(_lift(m, players)), len(players))
    return sub.table(workers), players


def _lift(m: int, players: Sequence[int]) -> int:
    out = 0
    for k, p in enumerate(players):
        if m >> k & 1:
            out |= 1 << p
    return out


def _witness(S: int, K: int, num: float, den: float, players, n) -> RatioWitness:
    return RatioWitness(BidderSet(_lift(S, players), n), BidderSet(_lift(K, players), n), num, den)


def is_supermodular(oracle: ObjectiveOracle, L=None, config: RatioConfig = RatioConfig()) -> SupermodularCheck:
    """Check increasing differences on every quadruple with finite values."""
    table, players = _table(oracle, L, config)
    zt = zero_tolerance(table, config.tol_ratio)
    hit = kernels.supermodular_violation(table, len(players), zt)
    if hit is None:
        return SupermodularCheck(True, None)
    S, R, l = hit
    n = oracle.n
    return SupermodularCheck(False, (BidderSet(_lift(S, players), n), BidderSet(_lift(R, players), n),
                                     players[l]))


def k_feas(oracle: ObjectiveOracle, L=None, config: RatioConfig = RatioConfig(),
           budget: int = 20_000) -> int:
    """Largest number of players whose joint removal keeps ``J`` finite.

    Exact by full table up to the exhaustive cap; above it a pruned
    level-by-level search runs within ``budget`` evaluations.
    """
    players = _players(oracle, L)
    if len(players) <= config.exhaustive_cap:
        table, players = _table(oracle, L, config)
        return kernels.kfeas(table, len(players))
    return _kfeas_search(oracle, players, budget)[0]


def _kfeas_search(oracle, players, budget):
    full = _lift((1 << len(players)) - 1, players)
    if oracle.evaluate(full) == math.inf:
        return 0, True
    frontier = [0]  # removal masks (over oracle bits) known feasible
    best = 0
    start = oracle.eval_count
    while frontier:
        nxt = set()
        for rem in frontier:
            top = max((i for i in players if rem >> i & 1), default=-1)
            for p in players:
                if p <= top:
                    continue
                cand = rem | 1 << p
                if oracle.eval_count - start > budget:
                    log.warning("k_feas search budget exhausted; returning lower estimate %d", best)
                    return best, False
                if oracle.evaluate(full & ~cand) < math.inf:
                    nxt.add(cand)
        if nxt:
            best += 1
        frontier = sorted(nxt)
    return best, True


def ratio_exhaustive(oracle: ObjectiveOracle, L=None, config: RatioConfig = RatioConfig(),
                     workers: int = 1) -> RatioReport:
    """Supermodularity ratio by scanning every pair ``K <= S <= L``."""
    table, players = _table(oracle, L, config, workers)
    n = len(players)
    zt = zero_tolerance(table, config.tol_ratio)
    gamma, S, K, num, den, pairs = kernels.ratio_scan(table, n, zt)
    witnesses = ()
    if S >= 0 and den > 0:
        raw = kernels.ratio_witnesses(table, n, zt, gamma, config.tol_ratio, config.witness_limit)
        witnesses = tuple(_witness(s, k, a, b, players, oracle.n) for s, k, a, b in raw)
    return RatioReport(
        gamma=float(min(max(gamma, 0.0), 1.0)),
        witnesses=witnesses,
        method="exhaustive",
        k_feas=kernels.kfeas(table, n),
        evaluations_used=oracle.eval_count,
        iterations=pairs,
        labels=tuple(oracle.labels),
    )


def ratio_constraint_generation(oracle: ObjectiveOracle, L=None,
                                config: RatioConfig = RatioConfig(),
                                workers: int = 1) -> RatioReport:
    """Supermodularity ratio by constraint generation.

    Starts from ``gamma = 1``; each round separates the constraint with the
    largest violation ``gamma*den - num`` and re-solves the one-variable
    master, whose optimum is the smallest ``num/den`` generated so far.
    Separation is exact enumeration up to the exhaustive cap and random
    pair sampling above it (then the result is an upper estimate).
    """
    players = _players(oracle, L)
    n = len(players)
    exact = n <= config.exhaustive_cap
    if exact:
        table, players = _table(oracle, L, config, workers)
        zt = zero_tolerance(table, config.tol_ratio)

        def separate(gamma):
            return kernels.max_violation(table, n, gamma, zt)
    else:
        rng = np.random.default_rng(config.seed)
        sampled = _SampledSeparation(oracle, players, rng, config)
        separate = sampled.separate

    gamma = 1.0
    generated: dict[tuple[int, int], tuple[float, float]] = {}
    best_key = None
    it = 0
    while True:
        viol, S, K, num, den = separate(gamma)
        if S < 0 or viol <= config.tol_ratio * den or (S, K) in generated:
            break
        generated[(S, K)] = (num, den)
        if num / den < gamma:
            gamma, best_key = num / den, (S, K)
        it += 1
        if it >= config.max_iterations:
            rep = _cg_report(oracle, players, gamma, best_key, generated, it, upper=True,
                             kf=_kf(oracle, players, config, table if exact else None))
            raise BudgetExceeded("constraint generation iteration budget exhausted", rep)
    kf = _kf(oracle, players, config, table if exact else None)
    return _cg_report(oracle, players, gamma, best_key, generated, it, upper=not exact, kf=kf)


def _kf(oracle, players, config, table):
    if table is not None:
        return kernels.kfeas(table, len(players)), True
    return _kfeas_search(oracle, players, 5000)


def _cg_report(oracle, players, gamma, best_key, generated, it, upper, kf):
    witnesses = ()
    if best_key is not None:
        num, den = generated[best_key]
        witnesses = (_witness(best_key[0], best_key[1], num, den, players, oracle.n),)
    return RatioReport(
        gamma=float(min(max(gamma, 0.0), 1.0)),
        witnesses=witnesses,
        method="constraint-generation",
        k_feas=kf[0],
        kfeas_exact=kf[1],
        evaluations_used=oracle.eval_count,
        upper_estimate=upper,
        iterations=it,
        labels=tuple(oracle.labels),
    )


class _SampledSeparation:
    """Approximate separation over randomly drawn pairs (large player sets)."""

    def __init__(self, oracle, players, rng, config: RatioConfig):
        self.oracle, self.players, self.rng, self.cfg = oracle, players, rng, config
        self.pairs: list[tuple[int, int, float, float]] = []
        full = _lift((1 << len(players)) - 1, players)
        scale = abs(oracle.evaluate(full)) if oracle.evaluate(full) < math.inf else 1.0
        self.zt = config.tol_ratio * (1.0 + scale)
        self._draw(config.sample_pairs)

    def _draw(self, count):
        n = len(self.players)
        J = self.oracle.evaluate
        for _ in range(count):
            Sm = int(self.rng.integers(1, 1 << n)) if n < 63 else \
                sum(1 << k for k in range(n) if self.rng.random() < 0.5)
            if Sm == 0:
                continue
            members = [k for k in range(n) if Sm >> k & 1]
            size = int(self.rng.integers(1, min(len(members), 3) + 1))
            Km = 0
            for k in self.rng.choice(members, size=size, replace=False):
                Km |= 1 << int(k)
            S, K = _lift(Sm, self.players), _lift(Km, self.players)
            jS = J(S)
            if jS == math.inf:
                continue
            jK = J(S & ~K)
            if jK == math.inf:
                continue
            den = sum(J(S & ~(1 << self.players[k])) - jS for k in range(n) if Km >> k & 1)
            num = jK - jS
            num = num if num > self.zt else 0.0
            if den > self.zt and den - num > self.zt:
                self.pairs.append((Sm, Km, num, den))

    def separate(self, gamma):
        best = (-math.inf, -1, -1, 0.0, 0.0)
        for S, K, num, den in self.pairs:
            v = gamma * den - num
            if v > best[0]:
                best = (v, S, K, num, den)
        return best


def ratio_market_estimate(instance, sampler, n_profiles: int, seed: int,
                          config: RatioConfig = RatioConfig(), players=None,
                          method: str = "cg", workers: int = 1) -> RatioReport:
    """Minimum per-profile ratio over ``n_profiles`` sampled bid profiles."""
    from .cases import sample_profile
    from .dispatch import NumericalFailure, make_oracle

    if n_profiles < 1:
        raise ValueError("n_profiles must be >= 1")
    rng = np.random.default_rng(seed)
    per = []
    best: Optional[RatioReport] = None
    evals = 0
    kf = None
    kf_exact = True
    upper = False
    for k in range(n_profiles):
        profile = sample_profile(instance, sampler, rng)
        oracle = make_oracle(instance, profile, players)
        try:
            if method == "exact":
                rep = ratio_exhaustive(oracle, None, config, workers)
            else:
                rep = ratio_constraint_generation(oracle, None, config, workers)
        except NumericalFailure as exc:
            log.warning("profile %d skipped: %s", k, exc)
            continue
        evals += rep.evaluations_used
        per.append(rep.gamma)
        upper = upper or rep.upper_estimate
        if kf is None:
            kf, kf_exact = rep.k_feas, rep.kfeas_exact
        if best is None or rep.gamma < best.gamma:
            best = rep
    if best is None:
        raise RuntimeError("every sampled profile failed")
    return RatioReport(
        gamma=best.gamma,
        witnesses=best.witnesses,
        method=best.method,
        k_feas=kf,
        kfeas_exact=kf_exact,
        evaluations_used=evals,
        upper_estimate=upper,
        iterations=best.iterations,
        per_profile=tuple(per),
        labels=best.labels,
    )
