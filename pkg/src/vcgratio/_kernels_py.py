"""Pure-Python set-function scans over a dense objective table.

``J`` is indexed by bitmask over ``n`` players and holds ``inf`` for
infeasible sets. Every function here has a compiled twin in
``_kernels.pyx`` with the identical signature and results.

A pair ``(S, K)`` with ``K`` a nonempty subset of ``S`` contributes
``num = J(S - K) - J(S)`` and ``den = sum_{l in K} J(S - l) - J(S)``;
differences at or below ``zero_tol`` count as zero. Pairs with an
infeasible ``S`` or ``S - K`` are skipped, ``0/0`` pairs count as ratio 1,
``num > 0`` over ``den = 0`` pairs are skipped, and a pair whose gap
``den - num`` is at or below ``zero_tol`` counts as ratio 1 (the gap is
itself a sum of ``J`` differences, so it gets the same noise floor).
"""
from __future__ import annotations

import math

INF = math.inf


def _ctz(x: int) -> int:
    return (x & -x).bit_length() - 1


def ratio_scan(J, n: int, zero_tol: float):
    """Minimum pair ratio. Returns ``(gamma, S, K, num, den, pairs)``; ``S == -1`` if no pair."""
    J = list(map(float, J))
    size = 1 << n
    dsum = [0.0] * size
    best = (INF, -1, -1, 0.0, 0.0)
    pairs = 0
    for S in range(1, size):
        jS = J[S]
        if jS == INF:
            continue
        d = [0.0] * n
        for l in range(n):
            if S >> l & 1:
                d[l] = J[S ^ (1 << l)] - jS
        K = 0
        while True:
            K = (K - S) & S
            if K == 0:
                break
            dsum[K] = dsum[K & (K - 1)] + d[_ctz(K)]
            jK = J[S & ~K]
            if jK == INF:
                continue
            den = dsum[K]
            if den == INF:
                continue
            num = jK - jS
            num = num if num > zero_tol else 0.0
            den = den if den > zero_tol else 0.0
            if den == 0.0:
                if num != 0.0:
                    continue
                r = 1.0
            else:
                r = num / den
                if r < 1.0 and den - num <= zero_tol:
                    r = 1.0
            pairs += 1
            if r < best[0]:
                best = (r, S, K, num, den)
    gamma = 1.0 if best[1] < 0 else best[0]
    return gamma, best[1], best[2], best[3], best[4], pairs


def ratio_witnesses(J, n: int, zero_tol: float, gamma: float, tol: float, limit: int):
    """Pairs with ``den > 0`` and ratio within ``tol`` of ``gamma``, at most ``limit``."""
    J = list(map(float, J))
    size = 1 << n
    dsum = [0.0] * size
    out = []
    for S in range(1, size):
        jS = J[S]
        if jS == INF:
            continue
        d = [0.0] * n
        for l in range(n):
            if S >> l & 1:
                d[l] = J[S ^ (1 << l)] - jS
        K = 0
        while True:
            K = (K - S) & S
            if K == 0:
                break
            dsum[K] = dsum[K & (K - 1)] + d[_ctz(K)]
            jK = J[S & ~K]
            den = dsum[K]
            if jK == INF or den == INF or den <= zero_tol:
                continue
            num = jK - jS
            num = num if num > zero_tol else 0.0
            if den - num <= zero_tol:
                continue
            if num / den <= gamma + tol:
                out.append((S, K, num, den))
                if len(out) >= limit:
                    return out
    return out


def max_violation(J, n: int, gamma: float, zero_tol: float):
    """Most violated ratio constraint ``gamma*den - num``. Returns ``(viol, S, K, num, den)``."""
    J = list(map(float, J))
    size = 1 << n
    dsum = [0.0] * size
    best = (-INF, -1, -1, 0.0, 0.0)
    for S in range(1, size):
        jS = J[S]
        if jS == INF:
            continue
        d = [0.0] * n
        for l in range(n):
            if S >> l & 1:
                d[l] = J[S ^ (1 << l)] - jS
        K = 0
        while True:
            K = (K - S) & S
            if K == 0:
                break
            dsum[K] = dsum[K & (K - 1)] + d[_ctz(K)]
            jK = J[S & ~K]
            den = dsum[K]
            if jK == INF or den == INF or den <= zero_tol:
                continue
            num = jK - jS
            num = num if num > zero_tol else 0.0
            if den - num <= zero_tol:
                continue
            v = gamma * den - num
            if v > best[0]:
                best = (v, S, K, num, den)
    return best


def supermodular_violation(J, n: int, zero_tol: float):
    """First ``(S, R, l)`` with ``J(S)-J(S-l) > J(R)-J(R-l) + zero_tol``, or ``None``.

    Only quadruples whose four values are finite are checked.
    """
    J = list(map(float, J))
    size = 1 << n
    for R in range(1, size):
        jR = J[R]
        if jR == INF:
            continue
        for l in range(n):
            bit = 1 << l
            if not R & bit:
                continue
            jRl = J[R ^ bit]
            if jRl == INF:
                continue
            rhs = jR - jRl
            rest = R ^ bit
            T = 0
            while True:
                S = T | bit
                jS = J[S]
                jSl = J[T]
                if jS != INF and jSl != INF and (jS - jSl) - rhs > zero_tol:
                    return S, R, l
                T = (T - rest) & rest
                if T == 0:
                    break
    return None


def kfeas(J, n: int) -> int:
    """Largest ``|K|`` with ``J(L - K)`` finite (0 if ``J(L)`` is infinite)."""
    size = 1 << n
    best = -1
    for S in range(size):
        if J[S] != INF:
            k = n - bin(S).count("1")
            if k > best:
                best = k
    if J[size - 1] == INF:
        return 0
    return best
