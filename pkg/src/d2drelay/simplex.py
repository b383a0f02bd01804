"""Dense bounded-variable primal simplex.

Solves ``min c.x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  lb <= x <= ub``
with finite lower bounds. Two phases with artificial variables; Dantzig
pricing that falls back to Bland's rule after a run of degenerate pivots.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


class LPSolverError(RuntimeError):
    """Numerical breakdown or iteration limit; distinct from an infeasible model."""


@dataclass
class LPResult:
    status: str
    x: np.ndarray | None = None
    objective: float = float("nan")
    iterations: int = 0
    basis: np.ndarray | None = None

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class _Tableau:
    def __init__(self, A, b, lb, ub, x0, basis, tol):
        self.A = A  # original columns, for refactorisation
        self.b = b
        self.lb = lb
        self.ub = ub
        self.x = x0
        self.basis = basis
        self.tol = tol
        self.T = np.linalg.solve(A[:, basis], A)
        self.iterations = 0

    def refactor(self):
        B = self.A[:, self.basis]
        nonbasic = np.ones(self.A.shape[1], dtype=bool)
        nonbasic[self.basis] = False
        rhs = self.b - self.A[:, nonbasic] @ self.x[nonbasic]
        try:
            self.x[self.basis] = np.linalg.solve(B, rhs)
            self.T = np.linalg.solve(B, self.A)
        except np.linalg.LinAlgError as exc:
            raise LPSolverError(f"singular basis: {exc}") from None

    def run(self, c, max_iter, bland_after=50):
        tol = self.tol
        m, n = self.T.shape
        degenerate = 0
        in_basis = np.zeros(n, dtype=bool)
        in_basis[self.basis] = True
        while True:
            if self.iterations >= max_iter:
                raise LPSolverError(f"iteration limit {max_iter} reached")
            d = c - c[self.basis] @ self.T
            at_lower = self.x <= self.lb + tol
            at_upper = self.x >= self.ub - tol
            fixed = self.ub - self.lb <= tol
            cand_up = (~in_basis) & (~fixed) & at_lower & (d < -tol)
            cand_dn = (~in_basis) & (~fixed) & at_upper & (d > tol)
            cand = np.nonzero(cand_up | cand_dn)[0]
            if not len(cand):
                return OPTIMAL
            if degenerate >= bland_after:
                j = int(cand[0])
            else:
                j = int(cand[np.argmax(np.abs(d[cand]))])
            sigma = 1.0 if cand_up[j] else -1.0
            alpha = self.T[:, j]
            xb = self.x[self.basis]
            lbb, ubb = self.lb[self.basis], self.ub[self.basis]
            theta = self.ub[j] - self.lb[j]
            leave, leave_to = -1, 0.0
            sa = sigma * alpha
            best_piv = 0.0
            for i in range(m):
                a = sa[i]
                if a > tol:
                    lim = (xb[i] - lbb[i]) / a
                    bound = lbb[i]
                elif a < -tol and np.isfinite(ubb[i]):
                    lim = (ubb[i] - xb[i]) / (-a)
                    bound = ubb[i]
                else:
                    continue
                lim = max(lim, 0.0)
                if lim < theta - tol:
                    theta, leave, leave_to, best_piv = lim, i, bound, abs(a)
                elif lim <= theta + tol and leave >= 0:
                    # tie between basic rows
                    if degenerate >= bland_after:
                        if self.basis[i] < self.basis[leave]:
                            leave, leave_to, best_piv = i, bound, abs(a)
                    elif abs(a) > best_piv:
                        theta, leave, leave_to, best_piv = min(theta, lim), i, bound, abs(a)
            if not np.isfinite(theta):
                return UNBOUNDED
            step = sigma * theta
            self.x[self.basis] = xb - step * alpha
            self.x[j] += step
            degenerate = degenerate + 1 if theta <= tol else 0
            self.iterations += 1
            if leave < 0:
                # bound flip, basis unchanged
                self.x[j] = self.ub[j] if sigma > 0 else self.lb[j]
                continue
            out = self.basis[leave]
            self.x[out] = leave_to
            piv = self.T[leave, j]
            if abs(piv) < 1e-11:
                raise LPSolverError("pivot element too small")
            self.T[leave] /= piv
            col = self.T[:, j].copy()
            col[leave] = 0.0
            self.T -= np.outer(col, self.T[leave])
            self.basis[leave] = j
            in_basis[out] = False
            in_basis[j] = True
            if self.iterations % 50 == 0:
                self.refactor()


def solve(c, A_eq=None, b_eq=None, A_ub=None, b_ub=None, lb=None, ub=None,
          tol: float = 1e-9, max_iter: int | None = None) -> LPResult:
    c = np.asarray(c, dtype=float)
    n = len(c)
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, dtype=float).reshape(-1, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    lb = np.zeros(n) if lb is None else np.asarray(lb, dtype=float).copy()
    ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float).copy()
    if not np.all(np.isfinite(lb)):
        raise ValueError("lower bounds must be finite")
    if np.any(lb > ub + tol):
        return LPResult(INFEASIBLE)
    m_eq, m_ub = len(b_eq), len(b_ub)
    m = m_eq + m_ub
    if m == 0:
        x = np.where(c < 0, ub, lb)
        if np.any(~np.isfinite(x)):
            return LPResult(UNBOUNDED)
        return LPResult(OPTIMAL, x, float(c @ x))
    max_iter = max_iter or 50 * (n + m) + 1000

    # structural | slacks | artificials
    A = np.zeros((m, n + m_ub + m))
    A[:m_eq, :n] = A_eq
    A[m_eq:, :n] = A_ub
    A[m_eq:, n:n + m_ub] = np.eye(m_ub)
    b = np.concatenate([b_eq, b_ub])
    n_tot = n + m_ub + m
    lo = np.concatenate([lb, np.zeros(m_ub), np.zeros(m)])
    hi = np.concatenate([ub, np.full(m_ub, np.inf), np.full(m, np.inf)])
    x = lo.copy()
    resid = b - A[:, : n + m_ub] @ x[: n + m_ub]
    sign = np.where(resid >= 0, 1.0, -1.0)
    art = np.arange(n + m_ub, n_tot)
    A[np.arange(m), art] = sign
    x[art] = np.abs(resid)
    basis = art.copy()
    tab = _Tableau(A, b, lo, hi, x, basis, tol)

    c1 = np.zeros(n_tot)
    c1[art] = 1.0
    status = tab.run(c1, max_iter)
    if status != OPTIMAL:
        raise LPSolverError("phase one did not terminate at an optimum")
    tab.refactor()
    scale = max(1.0, float(np.abs(b).max()))
    if tab.x[art].sum() > 1e-8 * scale:
        return LPResult(INFEASIBLE, iterations=tab.iterations)
    tab.x[art] = 0.0
    tab.ub[art] = 0.0

    c2 = np.zeros(n_tot)
    c2[:n] = c
    status = tab.run(c2, max_iter)
    if status == UNBOUNDED:
        return LPResult(UNBOUNDED, iterations=tab.iterations)
    tab.refactor()
    xs = tab.x[:n].copy()
    # snap to bounds
    xs = np.where(np.abs(xs - lb) <= 1e-11, lb, xs)
    fin = np.isfinite(ub)
    xs[fin] = np.where(np.abs(xs[fin] - ub[fin]) <= 1e-11, ub[fin], xs[fin])
    if np.any(xs < lb - 1e-8) or np.any(xs > ub + 1e-8):
        raise LPSolverError("solution violates variable bounds")
    if m_eq and np.abs(A_eq @ xs - b_eq).max() > 1e-9 * scale:
        raise LPSolverError("solution violates equality rows")
    if m_ub and (A_ub @ xs - b_ub).max() > 1e-9 * scale:
        raise LPSolverError("solution violates inequality rows")
    return LPResult(OPTIMAL, xs, float(c @ xs), tab.iterations, tab.basis.copy())
