"""Dense primal active-set solver for small convex QPs.

Solves::

    min  0.5 * sum(h * x**2) + c @ x
    s.t. A @ x == b,  G @ x <= g,  lb <= x <= ub

with ``h >= 0`` (diagonal Hessian, so pure LPs are included). A phase-1 LP
over artificial variables decides feasibility exactly; the optimum found
in phase 2 is polished on its final working set and certified with the
Lagrangian dual bound in which the box constraints are kept explicit
(that dual is separable, so it is available in closed form for any
multipliers).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


class NumericalFailure(RuntimeError):
    """The active-set iteration did not converge."""


@dataclass
class QPResult:
    status: str  # "optimal" | "infeasible"
    x: np.ndarray
    objective: float
    gap: float
    eq_mult: np.ndarray
    ineq_mult: np.ndarray
    unique: bool
    iterations: int
    infeasibility: float


def _null_space(W: np.ndarray, n: int) -> np.ndarray:
    if W.shape[0] == 0 or n == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(W, full_matrices=True)
    rank = int((s > 1e-10 * max(s[0], 1e-300)).sum()) if s.size else 0
    return vt[rank:].T


def _rank(W: np.ndarray) -> int:
    if W.size == 0:
        return 0
    s = np.linalg.svd(W, compute_uv=False)
    return int((s > 1e-10 * max(s[0], 1e-300)).sum())


class _Problem:
    def __init__(self, h, c, A, b, G, g, lb, ub):
        self.h, self.c = h, c
        self.A, self.b, self.G, self.g = A, b, G, g
        self.lb, self.ub = lb, ub
        self.n = c.size
        self.me = A.shape[0]
        fin = np.concatenate([np.abs(b), np.abs(g), np.abs(lb[np.isfinite(lb)]),
                              np.abs(ub[np.isfinite(ub)]), [0.0]])
        self.xscale = 1.0 + float(fin.max())
        hub = h * np.where(np.isfinite(ub), ub, 0.0)
        self.gscale = 1.0 + float(np.abs(c).max(initial=0.0)) + float(np.abs(hub).max(initial=0.0))

    def repair(self, fixed: np.ndarray, rows: list[int]) -> list[int]:
        """Shrink the working set until its rows are independent on the free variables."""
        target = _rank(self.A)
        rows = list(rows)
        while True:
            W = np.vstack([self.A, self.G[rows]])
            if _rank(W[:, fixed == 0]) >= target + len(rows):
                return rows
            if rows:
                rows.pop()
                continue
            # equality rows lost rank: free the fixed variable that restores most rank
            best, best_rank = None, -1
            for j in np.flatnonzero(fixed):
                trial = fixed.copy()
                trial[j] = 0
                r = _rank(self.A[:, trial == 0])
                if r > best_rank:
                    best, best_rank = j, r
            if best is None:
                return rows
            fixed[best] = 0

    def run(self, x, fixed, rows, max_iter):
        """Active-set iterations from a feasible ``x``. Returns the final state."""
        h, c, A, G, g = self.h, self.c, self.A, self.G, self.g
        lb, ub = self.lb, self.ub
        n, me = self.n, self.me
        gtol = 1e-10 * self.gscale
        ptol = 1e-11 * self.xscale
        dual_tol = 1e-9 * self.gscale
        zero_steps = 0
        for it in range(max_iter):
            free = fixed == 0
            W = np.vstack([A, G[rows]]) if rows else A
            WF = W[:, free]
            grad = h * x + c
            gF = grad[free]
            nF = int(free.sum())
            Z = _null_space(WF, nF)
            ray = False
            flat_any = False
            pF = np.zeros(nF)
            if Z.shape[1]:
                r = Z.T @ gF
                M = Z.T @ (h[free][:, None] * Z)
                w, Q = np.linalg.eigh(M)
                flat = w <= 1e-11 * max(1.0, float(w.max()))
                flat_any = bool(flat.any())
                r0 = Q[:, flat].T @ r if flat_any else np.zeros(0)
                if flat_any and np.abs(r0).max() > gtol:
                    pF = -(Z @ (Q[:, flat] @ r0))
                    ray = True
                else:
                    cv = ~flat
                    if cv.any():
                        pF = -(Z @ (Q[:, cv] @ ((Q[:, cv].T @ r) / w[cv])))
            if not ray and (pF.size == 0 or np.abs(pF).max() <= ptol):
                if WF.shape[0]:
                    mu = np.linalg.lstsq(WF.T, -gF, rcond=None)[0] if nF else np.zeros(W.shape[0])
                else:
                    mu = np.zeros(0)
                resid = grad + W.T @ mu if W.shape[0] else grad.copy()
                nu = np.where(fixed == -1, resid, -resid)
                nu[free] = np.inf
                lam = mu[me:]
                cand = []  # (multiplier, index) with index < n a bound, >= n a row slot
                j_neg = np.flatnonzero(nu < -dual_tol)
                cand += [(nu[j], int(j)) for j in j_neg]
                cand += [(lam[k], n + k) for k in np.flatnonzero(lam < -dual_tol)]
                if not cand:
                    strict = bool(np.all(nu[~free] > dual_tol) and np.all(lam > dual_tol))
                    return x, fixed, rows, it, (not flat_any) and strict
                if zero_steps >= 3:
                    _, drop = min(cand, key=lambda t: t[1] if t[1] < n else n + rows[t[1] - n])
                else:
                    _, drop = min(cand)
                if drop < n:
                    fixed[drop] = 0
                else:
                    rows.pop(drop - n)
                continue
            p = np.zeros(n)
            p[free] = pF
            alpha = np.inf if ray else 1.0
            block = None
            eps = 1e-12 * float(np.abs(pF).max())
            idx = np.flatnonzero(free)
            for j, pj in zip(idx, pF):
                if pj < -eps and np.isfinite(lb[j]):
                    t = max(x[j] - lb[j], 0.0) / -pj
                elif pj > eps and np.isfinite(ub[j]):
                    t = max(ub[j] - x[j], 0.0) / pj
                else:
                    continue
                if t < alpha:
                    alpha, block = t, ("lb" if pj < 0 else "ub", int(j))
            if G.shape[0]:
                active = set(rows)
                Gp = G @ p
                slack = g - G @ x
                for i in np.flatnonzero(Gp > 1e-12 * max(1.0, float(np.abs(Gp).max()))):
                    if i in active:
                        continue
                    t = max(slack[i], 0.0) / Gp[i]
                    if t < alpha:
                        alpha, block = t, ("row", int(i))
            if not np.isfinite(alpha):
                raise NumericalFailure("unbounded direction in active-set QP")
            x = x + alpha * p
            zero_steps = zero_steps + 1 if alpha * float(np.abs(pF).max()) <= ptol else 0
            if block is not None:
                kind, j = block
                if kind == "lb":
                    x[j] = lb[j]
                    fixed[j] = -1
                elif kind == "ub":
                    x[j] = ub[j]
                    fixed[j] = 1
                else:
                    rows.append(j)
            x = np.clip(x, lb, ub)
        raise NumericalFailure(f"active-set QP did not converge in {max_iter} iterations")

    def multipliers(self, x, fixed, rows):
        free = fixed == 0
        W = np.vstack([self.A, self.G[rows]]) if rows else self.A
        grad = self.h * x + self.c
        if W.shape[0] and free.any():
            mu = np.linalg.lstsq(W[:, free].T, -grad[free], rcond=None)[0]
        else:
            mu = np.zeros(W.shape[0])
        y = mu[: self.me]
        lam = np.zeros(self.G.shape[0])
        if rows:
            lam[rows] = np.maximum(mu[self.me:], 0.0)
        return y, lam

    def dual_value(self, y, lam) -> float:
        s = self.c + self.A.T @ y + self.G.T @ lam
        h, lb, ub = self.h, self.lb, self.ub
        with np.errstate(divide="ignore", invalid="ignore"):
            zq = np.clip(np.where(h > 0, -s / np.where(h > 0, h, 1.0), 0.0), lb, ub)
        zl = np.where(s >= 0, lb, ub)
        z = np.where(h > 0, zq, zl)
        if not np.all(np.isfinite(z)):
            return -np.inf
        return float(0.5 * (h * z * z).sum() + s @ z - y @ self.b - lam @ self.g)

    def objective(self, x) -> float:
        return float(0.5 * (self.h * x * x).sum() + self.c @ x)

    def violation(self, x) -> float:
        v = 0.0
        if self.me:
            v = max(v, float(np.abs(self.A @ x - self.b).max()))
        if self.G.shape[0]:
            v = max(v, float((self.G @ x - self.g).max()))
        v = max(v, float((self.lb - x).max(initial=0.0)), float((x - self.ub).max(initial=0.0)))
        return v


def _normalize_rows(M, r, equality, tol):
    keep, scale = [], []
    for i in range(M.shape[0]):
        s = float(np.linalg.norm(M[i]))
        if s <= 1e-14:
            bad = abs(r[i]) > tol if equality else r[i] < -tol
            if bad:
                return None
            continue
        keep.append(i)
        scale.append(s)
    if not keep:
        return np.zeros((0, M.shape[1])), np.zeros(0), keep, np.zeros(0)
    scale = np.array(scale)
    return M[keep] / scale[:, None], r[keep] / scale, keep, scale


def _as_matrix(M, n: int) -> np.ndarray:
    if M is None:
        return np.zeros((0, n))
    M = np.asarray(M, dtype=float)
    if n == 0:
        return np.zeros((M.shape[0] if M.ndim == 2 else 0, 0))
    return M.reshape(-1, n)


def solve_qp(h, c, A=None, b=None, G=None, g=None, lb=None, ub=None, *,
             x0: Optional[np.ndarray] = None, tol: float = 1e-9,
             max_iter: Optional[int] = None) -> QPResult:
    """Solve a convex QP with diagonal Hessian ``h``; see module docstring.

    ``x0``, when feasible, skips phase 1. Bounds on the original variables
    must be finite.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    h = np.zeros(n) if h is None else np.asarray(h, dtype=float)
    A = _as_matrix(A, n)
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float).ravel()
    G = _as_matrix(G, n)
    g = np.zeros(0) if g is None else np.asarray(g, dtype=float).ravel()
    lb = np.zeros(n) if lb is None else np.asarray(lb, dtype=float)
    ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
    if np.any(h < 0):
        raise ValueError("Hessian diagonal must be nonnegative")
    if np.any(lb > ub):
        return _infeasible(n, np.inf)

    # eliminate variables pinned by their bounds
    pinned = (ub - lb) <= 1e-12 * np.maximum(1.0, np.abs(ub))
    xp = np.where(pinned, lb, 0.0)
    const = float(0.5 * (h * xp * xp).sum() + c @ xp)
    b_red = b - A[:, pinned] @ xp[pinned]
    g_red = g - G[:, pinned] @ xp[pinned]
    keep = ~pinned
    hr, cr, lbr, ubr = h[keep], c[keep], lb[keep], ub[keep]
    Ar, Gr = A[:, keep], G[:, keep]

    scale0 = 1.0 + float(np.abs(np.concatenate([b_red, g_red, [0.0]])).max())
    feas_tol = tol * scale0
    ne = _normalize_rows(Ar, b_red, True, feas_tol)
    ni = _normalize_rows(Gr, g_red, False, feas_tol)
    if ne is None or ni is None:
        return _infeasible(n, np.inf)
    An, bn, _, _ = ne
    Gn, gn, _, _ = ni
    nr = cr.size
    if max_iter is None:
        max_iter = 60 * (nr + An.shape[0] + Gn.shape[0]) + 200

    def assemble(xr):
        x = xp.copy()
        x[keep] = xr
        return x

    if nr == 0:
        x = assemble(np.zeros(0))
        return QPResult("optimal", x, const, 0.0, np.zeros(A.shape[0]), np.zeros(G.shape[0]),
                        True, 0, 0.0)

    prob = _Problem(hr, cr, An, bn, Gn, gn, lbr, ubr)
    iters = 0
    start = None
    if x0 is not None:
        xs = np.clip(np.asarray(x0, dtype=float)[keep], lbr, ubr)
        if prob.violation(xs) <= feas_tol:
            start = xs
    if start is None:
        start, infeas, fixed, rows, it1 = _phase1(prob, max_iter)
        iters += it1
        if infeas > feas_tol:
            return _infeasible(n, infeas)
    else:
        fixed = np.zeros(nr, dtype=np.int8)
        fixed[start <= lbr] = -1
        fixed[(start >= ubr) & (fixed == 0)] = 1
        rows = []
    rows = prob.repair(fixed, rows)
    x, fixed, rows, it2, unique = prob.run(start.copy(), fixed, rows, max_iter)
    iters += it2

    # polish on the final working set
    x = x.copy()
    x[fixed == -1] = lbr[fixed == -1]
    x[fixed == 1] = ubr[fixed == 1]
    free = fixed == 0
    W = np.vstack([An, Gn[rows]]) if rows else An
    rhs = np.concatenate([bn, gn[rows]]) if rows else bn
    if free.any():
        nF = int(free.sum())
        WF = W[:, free]
        K = np.zeros((nF + W.shape[0], nF + W.shape[0]))
        K[:nF, :nF] = np.diag(hr[free])
        K[:nF, nF:] = WF.T
        K[nF:, :nF] = WF
        grad = hr * x + cr
        sol = np.linalg.lstsq(K, np.concatenate([-grad[free], rhs - W @ x]), rcond=None)[0]
        trial = x.copy()
        trial[free] += sol[:nF]
        if prob.violation(trial) <= max(prob.violation(x), feas_tol) and \
                prob.objective(trial) <= prob.objective(x) + 1e-12 * (1 + abs(prob.objective(x))):
            x = trial
    y, lam = prob.multipliers(x, fixed, rows)
    primal = prob.objective(x)
    dual = prob.dual_value(y, lam)
    gap = primal - dual
    x_full = assemble(x)
    return QPResult("optimal", x_full, primal + const, float(gap), y, lam, unique, iters,
                    prob.violation(x))


def _infeasible(n, infeas) -> QPResult:
    return QPResult("infeasible", np.zeros(0), np.inf, 0.0, np.zeros(0), np.zeros(0), True, 0,
                    float(infeas))


def _phase1(prob: _Problem, max_iter: int):
    n, me, mi = prob.n, prob.me, prob.G.shape[0]
    A, b, G, g = prob.A, prob.b, prob.G, prob.g
    z0 = np.clip(np.zeros(n), prob.lb, prob.ub)
    r = b - A @ z0
    s = G @ z0 - g
    N = n + 2 * me + mi
    A1 = np.hstack([A, np.eye(me), -np.eye(me), np.zeros((me, mi))])
    G1 = np.hstack([G, np.zeros((mi, 2 * me)), -np.eye(mi)])
    lb1 = np.concatenate([prob.lb, np.zeros(2 * me + mi)])
    ub1 = np.concatenate([prob.ub, np.full(2 * me + mi, np.inf)])
    c1 = np.concatenate([np.zeros(n), np.ones(2 * me + mi)])
    x1 = np.concatenate([z0, np.maximum(r, 0), np.maximum(-r, 0), np.maximum(s, 0)])
    p1 = _Problem(np.zeros(N), c1, A1, b, G1, g, lb1, ub1)
    fixed = np.zeros(N, dtype=np.int8)
    fixed[x1 <= lb1] = -1
    fixed[(x1 >= ub1) & (fixed == 0)] = 1
    rows = p1.repair(fixed, [])
    x, fixed, rows, it, _ = p1.run(x1, fixed, rows, max_iter)
    infeas = float(x[n:].sum())
    zf = fixed[:n].copy()
    # phase-2 rows: those G rows in the working set (artificial t must sit at 0)
    rows2 = [i for i in rows if x[n + 2 * me + i] <= 1e-12 * prob.xscale]
    return np.clip(x[:n], prob.lb, prob.ub), infeas, zf, rows2, it
