# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled set-function scans; same contract as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


cdef inline int _ctz(long long x) nogil:
    cdef int k = 0
    while not (x & 1):
        x >>= 1
        k += 1
    return k


cdef inline int _popcount(long long x) nogil:
    cdef int c = 0
    while x:
        x &= x - 1
        c += 1
    return c


def _as_table(J):
    return np.ascontiguousarray(J, dtype=np.float64)


def ratio_scan(J, int n, double zero_tol):
    cdef double[::1] t = _as_table(J)
    cdef long long size = 1LL << n
    cdef double[::1] dsum = np.zeros(size)
    cdef double d[64]
    cdef long long S, K, bestS = -1, bestK = -1, pairs = 0
    cdef int l
    cdef double jS, jK, num, den, r, best = INFINITY, bnum = 0.0, bden = 0.0
    with nogil:
        for S in range(1, size):
            jS = t[S]
            if jS == INFINITY:
                continue
            for l in range(n):
                if (S >> l) & 1:
                    d[l] = t[S ^ (1LL << l)] - jS
            K = 0
            while True:
                K = (K - S) & S
                if K == 0:
                    break
                dsum[K] = dsum[K & (K - 1)] + d[_ctz(K)]
                jK = t[S & ~K]
                if jK == INFINITY:
                    continue
                den = dsum[K]
                if den == INFINITY:
                    continue
                num = jK - jS
                if num <= zero_tol:
                    num = 0.0
                if den <= zero_tol:
                    den = 0.0
                if den == 0.0:
                    if num != 0.0:
                        continue
                    r = 1.0
                else:
                    r = num / den
                    if r < 1.0 and den - num <= zero_tol:
                        r = 1.0
                pairs += 1
                if r < best:
                    best = r
                    bestS = S
                    bestK = K
                    bnum = num
                    bden = den
    if bestS < 0:
        best = 1.0
    return best, int(bestS), int(bestK), bnum, bden, int(pairs)


def ratio_witnesses(J, int n, double zero_tol, double gamma, double tol, int limit):
    cdef double[::1] t = _as_table(J)
    cdef long long size = 1LL << n
    cdef double[::1] dsum = np.zeros(size)
    cdef double d[64]
    cdef long long S, K
    cdef int l
    cdef double jS, jK, num, den
    out = []
    for S in range(1, size):
        jS = t[S]
        if jS == INFINITY:
            continue
        for l in range(n):
            if (S >> l) & 1:
                d[l] = t[S ^ (1LL << l)] - jS
        K = 0
        while True:
            K = (K - S) & S
            if K == 0:
                break
            dsum[K] = dsum[K & (K - 1)] + d[_ctz(K)]
            jK = t[S & ~K]
            den = dsum[K]
            if jK == INFINITY or den == INFINITY or den <= zero_tol:
                continue
            num = jK - jS
            if num <= zero_tol:
                num = 0.0
            if den - num <= zero_tol:
                continue
            if num / den <= gamma + tol:
                out.append((int(S), int(K), num, den))
                if len(out) >= limit:
                    return out
    return out


def max_violation(J, int n, double gamma, double zero_tol):
    cdef double[::1] t = _as_table(J)
    cdef long long size = 1LL << n
    cdef double[::1] dsum = np.zeros(size)
    cdef double d[64]
    cdef long long S, K, bestS = -1, bestK = -1
    cdef int l
    cdef double jS, jK, num, den, v, best = -INFINITY, bnum = 0.0, bden = 0.0
    with nogil:
        for S in range(1, size):
            jS = t[S]
            if jS == INFINITY:
                continue
            for l in range(n):
                if (S >> l) & 1:
                    d[l] = t[S ^ (1LL << l)] - jS
            K = 0
            while True:
                K = (K - S) & S
                if K == 0:
                    break
                dsum[K] = dsum[K & (K - 1)] + d[_ctz(K)]
                jK = t[S & ~K]
                den = dsum[K]
                if jK == INFINITY or den == INFINITY or den <= zero_tol:
                    continue
                num = jK - jS
                if num <= zero_tol:
                    num = 0.0
                if den - num <= zero_tol:
                    continue
                v = gamma * den - num
                if v > best:
                    best = v
                    bestS = S
                    bestK = K
                    bnum = num
                    bden = den
    return best, int(bestS), int(bestK), bnum, bden


def supermodular_violation(J, int n, double zero_tol):
    cdef double[::1] t = _as_table(J)
    cdef long long size = 1LL << n
    cdef long long R, T, S, bit, rest
    cdef int l
    cdef double jR, jRl, rhs, jS, jSl
    cdef long long fS = -1, fR = -1
    cdef int fl = -1
    with nogil:
        for R in range(1, size):
            jR = t[R]
            if jR == INFINITY:
                continue
            for l in range(n):
                bit = 1LL << l
                if not (R & bit):
                    continue
                jRl = t[R ^ bit]
                if jRl == INFINITY:
                    continue
                rhs = jR - jRl
                rest = R ^ bit
                T = 0
                while True:
                    S = T | bit
                    jS = t[S]
                    jSl = t[T]
                    if jS != INFINITY and jSl != INFINITY and (jS - jSl) - rhs > zero_tol:
                        fS = S
                        fR = R
                        fl = l
                        break
                    T = (T - rest) & rest
                    if T == 0:
                        break
                if fS >= 0:
                    break
            if fS >= 0:
                break
    if fS < 0:
        return None
    return int(fS), int(fR), fl


def kfeas(J, int n):
    cdef double[::1] t = _as_table(J)
    cdef long long size = 1LL << n
    cdef long long S
    cdef int k, best = -1
    for S in range(size):
        if t[S] != INFINITY:
            k = n - _popcount(S)
            if k > best:
                best = k
    if t[size - 1] == INFINITY:
        return 0
    return best
