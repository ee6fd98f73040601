import math
import threading
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_kfeas, naive_ratio, table_dict
from strategies import closure_table, convex_table, monotone_tables, with_capacity
from vcgratio.bids import Block, Quadratic
from vcgratio.cases import simple_example
from vcgratio.dispatch import make_oracle
from vcgratio.model import Bidder, MarketInstance, Network
from vcgratio.setfunc import (BidderSet, BudgetExceeded, CapExceeded, ObjectiveOracle, RatioConfig,
                              is_supermodular, k_feas, ratio_constraint_generation,
                              ratio_exhaustive, zero_tolerance)

INF = math.inf


def table_oracle(J, n):
    return ObjectiveOracle(lambda m: J[m], n)


def zero_bid_profile():
    inst, C = simple_example(0.01)
    return inst, C.replace({2: Block(400.0, 0.0), 3: Block(400.0, 0.0)})


# ------------------------------------------------------------------ BidderSet


def test_bidder_set_ops():
    S = BidderSet.of([0, 2], 4)
    assert S.mask == 0b101 and len(S) == 2 and list(S) == [0, 2]
    assert 2 in S and 1 not in S
    assert S.without(0) == BidderSet(0b100, 4)
    assert S.issubset(BidderSet.full(4)) and not BidderSet.full(4).issubset(S)
    assert S.labels(["a", "b", "c", "d"]) == ["a", "c"]
    with pytest.raises(ValueError):
        BidderSet.of([4], 4)


# --------------------------------------------------------------------- oracle


def test_oracle_memoizes():
    calls = []
    o = ObjectiveOracle(lambda m: calls.append(m) or float(m), 3)
    assert o.evaluate(5) == 5.0 and o.evaluate(BidderSet(5, 3)) == 5.0
    assert calls == [5] and o.eval_count == 1


def test_oracle_thread_safe_single_count():
    def slow(m):
        time.sleep(0.001)
        return float(-m)

    o = ObjectiveOracle(slow, 6)
    threads = [threading.Thread(target=lambda: [o.evaluate(m) for m in range(64)]) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert o.eval_count == 64
    assert o.cache == {m: float(-m) for m in range(64)}


def test_table_parallel_equals_serial():
    rng = np.random.default_rng(0)
    J = with_capacity(closure_table(rng.uniform(0, 10, 256), 8), [1, 2, 3, 1, 2, 3, 1, 2], 6)
    a = table_oracle(J, 8).table(1)
    b = table_oracle(J, 8).table(4)
    assert np.array_equal(a, b) and np.array_equal(a, J)


def test_table_skips_subsets_of_infeasible_sets():
    J = with_capacity(np.zeros(16), [1, 1, 1, 1], 4)
    o = table_oracle(J, 4)
    o.table()
    assert o.eval_count == 1 + 4  # full set, then the four singletons-removed sets


def test_check_monotone_reports_violations():
    o = ObjectiveOracle(lambda m: float(bin(m).count("1")), 2)  # increasing: wrong direction
    for m in range(4):
        o.evaluate(m)
    bad = o.check_monotone(1e-9)
    assert (0, 3) in bad and (1, 3) in bad
    good = ObjectiveOracle(lambda m: -float(m), 2)
    good.table()
    assert good.check_monotone(1e-9) == []


def test_market_oracle_deterministic():
    inst, C = simple_example()
    a = make_oracle(inst, C).table()
    b = make_oracle(inst, C).table(workers=3)
    assert np.array_equal(a, b)


# ----------------------------------------------------------- market examples


def test_simple_example_ratio_and_kfeas():
    inst, B0 = zero_bid_profile()
    for fn in (ratio_exhaustive, ratio_constraint_generation):
        rep = fn(make_oracle(inst, B0))
        assert rep.gamma == pytest.approx(0.5, abs=1e-9)
        assert rep.k_feas == 2 and rep.lower_bound == 0.5
    w = ratio_exhaustive(make_oracle(inst, B0)).witnesses[0]
    assert w.K.labels([1, 2, 3]) == [2, 3] and w.ratio == pytest.approx(0.5)


def test_simple_example_supermodularity():
    inst, C = simple_example()
    o = make_oracle(inst, C)
    # every quadruple touching an infeasible set is skipped, leaving no violation
    assert is_supermodular(o).is_supermodular
    assert ratio_exhaustive(o).gamma >= 1.0 - 1e-9
    inst, B0 = zero_bid_profile()
    chk = is_supermodular(make_oracle(inst, B0))
    assert not chk.is_supermodular
    S, R, l = chk.counterexample
    assert S.issubset(R) and l in S


def test_kfeas_zero_slack():
    inst = MarketInstance(tuple(Bidder(i, 0, Quadratic(0, 10.0 + i, 100.0)) for i in (1, 2, 3)),
                          Network.single_bus(300.0))
    assert k_feas(make_oracle(inst, inst.truthful_profile())) == 0


def test_kfeas_brute_force_market():
    rng = np.random.default_rng(1)
    caps = rng.uniform(20, 100, 6).round(2)
    inst = MarketInstance(tuple(Bidder(i + 1, 0, Quadratic(0, 10 + i, float(c)))
                                for i, c in enumerate(caps)), Network.single_bus(float(caps.sum() * 0.5)))
    o = make_oracle(inst, inst.truthful_profile())
    J = table_dict(o)
    assert k_feas(o) == naive_kfeas(J, range(1, 7))


def test_sub_player_set():
    inst, B0 = zero_bid_profile()
    o = make_oracle(inst, B0)
    # the set function restricted to subsets of {bidder 1, bidder 2}
    rep = ratio_exhaustive(o, BidderSet.of([0, 1], 3))
    J = table_dict(o)
    sub = {S: v for S, v in J.items() if 3 not in S}
    zt = zero_tolerance(np.array(list(sub.values())), 1e-9)
    assert rep.gamma == pytest.approx(naive_ratio(sub, [1, 2], zt))
    assert rep.k_feas == naive_kfeas(sub, [1, 2])


# --------------------------------------------------------------- properties


@given(monotone_tables())
def test_gamma_in_unit_interval(data):
    J, n = data
    g = ratio_exhaustive(table_oracle(J, n)).gamma
    assert 0.0 <= g <= 1.0


@given(monotone_tables())
def test_gamma_one_iff_supermodular(data):
    J, n = data
    o = table_oracle(J, n)
    sm = is_supermodular(o).is_supermodular
    g = ratio_exhaustive(o).gamma
    assert sm == (g >= 1.0 - 1e-9)


@given(monotone_tables())
def test_gamma_at_least_inverse_kfeas(data):
    J, n = data
    rep = ratio_exhaustive(table_oracle(J, n))
    if rep.k_feas >= 1:
        assert rep.gamma >= 1.0 / rep.k_feas - 1e-12


@given(monotone_tables())
def test_constraint_generation_matches_exhaustive(data):
    J, n = data
    a = ratio_exhaustive(table_oracle(J, n)).gamma
    b = ratio_constraint_generation(table_oracle(J, n)).gamma
    assert b == pytest.approx(a, abs=1e-9)


@given(st.lists(st.floats(0.5, 10), min_size=1, max_size=6), st.floats(1.0, 3.0))
def test_convex_composition_is_supermodular(w, p):
    n = len(w)
    o = table_oracle(convex_table(w, lambda x: x ** p, n), n)
    assert is_supermodular(o).is_supermodular
    assert ratio_exhaustive(o).gamma >= 1.0 - 1e-9


@given(monotone_tables(allow_inf=False))
def test_telescoping_identity(data):
    """J(S-K) - J(S) equals the sum of marginals along any removal order."""
    J, n = data
    full = (1 << n) - 1
    order = list(range(n))
    cur, total = full, 0.0
    for l in order:
        total += J[cur & ~(1 << l)] - J[cur]
        cur &= ~(1 << l)
    assert total == pytest.approx(J[0] - J[full], abs=1e-9)


# ---------------------------------------------------------------- limits


def test_cap_exceeded():
    o = ObjectiveOracle(lambda m: 0.0, 5)
    with pytest.raises(CapExceeded):
        ratio_exhaustive(o, config=RatioConfig(exhaustive_cap=4))


def test_budget_exceeded_carries_report():
    # strictly decreasing ratios force several rounds
    J = convex_table([1, 2, 3, 4], lambda x: math.sqrt(x), 4)
    with pytest.raises(BudgetExceeded) as info:
        ratio_constraint_generation(table_oracle(J, 4), config=RatioConfig(max_iterations=1))
    rep = info.value.report
    assert rep.upper_estimate and rep.gamma < 1.0
    assert rep.gamma >= ratio_exhaustive(table_oracle(J, 4)).gamma


def test_sampled_separation_above_cap_is_upper_estimate():
    n = 14
    w = list(range(1, n + 1))
    J = convex_table(w, lambda x: math.sqrt(x), n)
    o = table_oracle(J, n)
    rep = ratio_constraint_generation(o, config=RatioConfig(exhaustive_cap=10, sample_pairs=300))
    assert rep.upper_estimate
    exact = ratio_exhaustive(table_oracle(J, n), config=RatioConfig(exhaustive_cap=14)).gamma
    assert rep.gamma >= exact - 1e-12 and rep.gamma < 1.0


def test_kfeas_search_above_cap():
    n = 14
    caps = [1] * n
    J = with_capacity(np.zeros(1 << n), caps, 9)
    o = table_oracle(J, n)
    assert k_feas(o, config=RatioConfig(exhaustive_cap=8)) == 5
