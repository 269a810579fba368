"""Bounded-variable revised simplex with Bland's anti-cycling rule.

Solves::

    min  c @ x
    s.t. a_ub @ x <= b_ub
         a_eq @ x == b_eq
         lower <= x <= upper

Variables are kept at one of their bounds while nonbasic, so box
constraints never become rows. Phase 1 drives a set of artificial columns to
zero; phase 2 optimizes the true cost with the artificials pinned at zero.
The basis is refactorized every iteration, which is cheap at the sizes used
here (tens of rows).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True)
class LPResult:
    x: np.ndarray
    objective: float
    status: str
    iterations: int

    @property
    def success(self) -> bool:
        return self.status == OPTIMAL


class _Tableau:
    """Standard-form state: ``A x = b`` with per-column bounds."""

    def __init__(self, a, b, lo, hi, basis, at_upper, tol):
        self.a = a
        self.b = b
        self.lo = lo
        self.hi = hi
        self.basis = list(basis)
        self.at_upper = at_upper
        self.tol = tol

    def nonbasic_values(self):
        x = np.where(self.at_upper, self.hi, self.lo)
        x[self.basis] = 0.0
        return x

    def basic_solution(self):
        xn = self.nonbasic_values()
        lu = scipy.linalg.lu_factor(self.a[:, self.basis], check_finite=False)
        xb = scipy.linalg.lu_solve(lu, self.b - self.a @ xn, check_finite=False)
        x = xn
        x[self.basis] = xb
        return x, lu

    def run(self, cost, max_iter):
        m, n = self.a.shape
        it = 0
        while it < max_iter:
            x, lu = self.basic_solution()
            y = scipy.linalg.lu_solve(lu, cost[self.basis], trans=1, check_finite=False)
            d = cost - self.a.T @ y
            in_basis = np.zeros(n, bool)
            in_basis[self.basis] = True
            enter = -1
            # Bland: lowest-index improving column
            for j in range(n):
                if in_basis[j] or self.hi[j] - self.lo[j] <= 0.0:
                    continue
                if (not self.at_upper[j] and d[j] < -self.tol) or (self.at_upper[j] and d[j] > self.tol):
                    enter = j
                    break
            if enter < 0:
                return OPTIMAL, x, it
            sign = -1.0 if self.at_upper[enter] else 1.0
            # x_B(t) = x_B - t * sign * w
            w = scipy.linalg.lu_solve(lu, self.a[:, enter], check_finite=False) * sign
            # ratio test; the entering column's own range is a candidate too
            cands = [(self.hi[enter] - self.lo[enter], enter, -1, False)]
            for r in range(m):
                k = self.basis[r]
                if w[r] > self.tol:
                    cands.append((max((x[k] - self.lo[k]) / w[r], 0.0), k, r, False))
                elif w[r] < -self.tol and np.isfinite(self.hi[k]):
                    cands.append((max((self.hi[k] - x[k]) / -w[r], 0.0), k, r, True))
            step = min(cd[0] for cd in cands)
            if not np.isfinite(step):
                return UNBOUNDED, x, it
            # Bland: among (near-)ties leave with the lowest variable index
            tied = [cd for cd in cands if cd[0] <= step + self.tol]
            _, _, leave, leave_to_upper = min(tied, key=lambda cd: cd[1])
            it += 1
            if leave < 0:
                # bound flip of the entering column
                self.at_upper[enter] = not self.at_upper[enter]
                continue
            k_out = self.basis[leave]
            self.basis[leave] = enter
            self.at_upper[enter] = False
            self.at_upper[k_out] = leave_to_upper
        x, _ = self.basic_solution()
        return ITERATION_LIMIT, x, it


def linprog(c, a_ub=None, b_ub=None, a_eq=None, b_eq=None, lower=None, upper=None, *,
            tol: float = 1e-10, max_iter: int = 10_000) -> LPResult:
    """Minimize ``c @ x`` subject to linear rows and finite lower bounds.

    Upper bounds may be ``inf``. Returns an :class:`LPResult`; ``status`` is
    one of ``optimal``, ``infeasible``, ``unbounded``, ``iteration_limit``.
    """
    c = np.asarray(c, dtype=float).ravel()
    n = len(c)
    a_ub = np.zeros((0, n)) if a_ub is None else np.atleast_2d(np.asarray(a_ub, float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, float).ravel()
    a_eq = np.zeros((0, n)) if a_eq is None else np.atleast_2d(np.asarray(a_eq, float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, float).ravel()
    lo = np.zeros(n) if lower is None else np.asarray(lower, float).ravel().copy()
    hi = np.full(n, np.inf) if upper is None else np.asarray(upper, float).ravel().copy()
    if a_ub.shape != (len(b_ub), n) or a_eq.shape != (len(b_eq), n):
        raise ValueError("constraint matrix and right-hand side shapes disagree")
    if len(lo) != n or len(hi) != n:
        raise ValueError("bounds must have one entry per variable")
    if not np.all(np.isfinite(lo)):
        raise ValueError("lower bounds must be finite")
    if np.any(hi < lo):
        return LPResult(lo.copy(), float("nan"), INFEASIBLE, 0)

    m_ub, m_eq = len(b_ub), len(b_eq)
    m = m_ub + m_eq
    if m == 0:
        x = np.where(c < 0, hi, lo)
        if np.any(~np.isfinite(x)):
            return LPResult(x, -np.inf, UNBOUNDED, 0)
        return LPResult(x, float(c @ x), OPTIMAL, 0)

    # columns: structural | slacks (ub rows) | artificials (all rows)
    a = np.zeros((m, n + m_ub + m))
    a[:m_ub, :n] = a_ub
    a[m_ub:, :n] = a_eq
    a[:m_ub, n:n + m_ub] = np.eye(m_ub)
    b = np.concatenate([b_ub, b_eq])
    col_lo = np.concatenate([lo, np.zeros(m_ub), np.zeros(m)])
    col_hi = np.concatenate([hi, np.full(m_ub, np.inf), np.full(m, np.inf)])

    resid = b - a[:, :n] @ lo
    art = n + m_ub + np.arange(m)
    a[np.arange(m), art] = np.where(resid >= 0, 1.0, -1.0)
    at_upper = np.zeros(a.shape[1], bool)
    # slack basic where its row is already satisfied; otherwise the artificial
    basis = []
    for r in range(m):
        if r < m_ub and resid[r] >= 0:
            basis.append(n + r)
        else:
            basis.append(art[r])
    tab = _Tableau(a, b, col_lo, col_hi, basis, at_upper, tol)

    cost1 = np.zeros(a.shape[1])
    cost1[art] = 1.0
    status, x, it1 = tab.run(cost1, max_iter)
    if status == ITERATION_LIMIT:
        return LPResult(x[:n], float(c @ x[:n]), status, it1)
    infeas = float(np.sum(x[art]))
    if infeas > max(1e-9, 1e-9 * float(np.max(np.abs(b), initial=1.0))):
        return LPResult(x[:n], float(c @ x[:n]), INFEASIBLE, it1)

    # pin artificials at zero; degenerate basic artificials stay harmlessly at 0
    tab.hi[art] = 0.0
    cost2 = np.zeros(a.shape[1])
    cost2[:n] = c
    status, x, it2 = tab.run(cost2, max_iter - it1)
    xs = np.clip(x[:n], lo, hi)
    return LPResult(xs, float(c @ xs), status, it1 + it2)
