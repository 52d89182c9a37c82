"""Dense two-phase primal simplex with Bland's anti-cycling rule.

Solves ``max c.x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  x >= 0``.
Instances here are tiny (tens of rows, ~100 columns), so a full tableau is fine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-10


class LPError(Exception):
    pass


class InfeasibleLP(LPError):
    pass


class UnboundedLP(LPError):
    pass


@dataclass(frozen=True)
class LPResult:
    x: np.ndarray
    value: float
    y_eq: np.ndarray  # duals of equality rows (free sign)
    y_ub: np.ndarray  # duals of <= rows (>= 0)
    basis: tuple[int, ...]  # basic structural/slack column indices
    iterations: int


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    col_vals = T[:, col].copy()
    col_vals[row] = 0.0
    T -= np.outer(col_vals, T[row])


def _bland_loop(T: np.ndarray, basis: list[int], allowed: np.ndarray, max_iter: int) -> int:
    """Run simplex iterations on tableau ``T`` whose last row holds reduced costs
    (positive entry = improving column, maximization). Returns iteration count."""
    m = T.shape[0] - 1
    it = 0
    while True:
        rc = T[-1, :-1]
        cand = np.flatnonzero((rc > PIVOT_TOL) & allowed)
        if cand.size == 0:
            return it
        col = int(cand[0])
        colv = T[:m, col]
        pos = colv > PIVOT_TOL
        if not pos.any():
            raise UnboundedLP("objective unbounded above")
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / colv[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + PIVOT_TOL * max(1.0, abs(best)))
        row = int(min(ties, key=lambda r: basis[r]))
        _pivot(T, row, col)
        basis[row] = col
        it += 1
        if it > max_iter:
            raise LPError("simplex iteration limit exceeded")


def solve_lp(
    c,
    A_eq=None,
    b_eq=None,
    A_ub=None,
    b_ub=None,
    max_iter: int = 10_000,
) -> LPResult:
    c = np.asarray(c, dtype=float)
    n = c.size
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    m_eq, m_ub = A_eq.shape[0], A_ub.shape[0]
    m = m_eq + m_ub

    # standard form: structural | ub slacks, every row an equality
    A = np.zeros((m, n + m_ub))
    A[:m_eq, :n] = A_eq
    A[m_eq:, :n] = A_ub
    A[m_eq:, n:] = np.eye(m_ub)
    b = np.concatenate([b_eq, b_ub])
    sign = np.where(b < 0, -1.0, 1.0)
    A *= sign[:, None]
    b = b * sign
    n_std = n + m_ub
    cost = np.concatenate([c, np.zeros(m_ub)])

    # phase I tableau with one artificial per row
    T = np.zeros((m + 1, n_std + m + 1))
    T[:m, :n_std] = A
    T[:m, n_std : n_std + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :n_std] = A.sum(axis=0)
    T[-1, -1] = b.sum()
    basis = list(range(n_std, n_std + m))
    allowed = np.ones(n_std + m, dtype=bool)
    iters = _bland_loop(T, basis, allowed, max_iter)
    infeas = T[-1, -1]
    if infeas > 1e-9 * max(1.0, np.abs(b).sum()):
        raise InfeasibleLP(f"no feasible point (phase I residual {infeas:.3e})")

    # drive zero-level artificials out; rows that cannot be are redundant
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        if basis[r] >= n_std:
            nz = np.flatnonzero(np.abs(T[r, :n_std]) > 1e-9)
            if nz.size:
                _pivot(T, r, int(nz[0]))
                basis[r] = int(nz[0])
            else:
                keep[r] = False
    rows = np.flatnonzero(keep)
    T2 = np.zeros((rows.size + 1, n_std + 1))
    T2[:-1, :n_std] = T[rows, :n_std]
    T2[:-1, -1] = T[rows, -1]
    basis2 = [basis[r] for r in rows]
    cb = cost[basis2]
    T2[-1, :n_std] = cost - cb @ T2[:-1, :n_std]
    T2[-1, -1] = -(cb @ T2[:-1, -1])
    iters += _bland_loop(T2, basis2, np.ones(n_std, dtype=bool), max_iter)

    x_std = np.zeros(n_std)
    x_std[basis2] = T2[:-1, -1]
    x = x_std[:n].copy()
    x[np.abs(x) < 1e-13] = 0.0

    # duals: solve B^T y = c_B on the kept (sign-normalised) rows
    Bm = A[np.ix_(rows, basis2)]
    y_kept = np.linalg.solve(Bm.T, cost[basis2]) if rows.size else np.zeros(0)
    y = np.zeros(m)
    y[rows] = y_kept
    y *= sign
    return LPResult(
        x=x,
        value=float(c @ x),
        y_eq=y[:m_eq],
        y_ub=y[m_eq:],
        basis=tuple(int(k) for k in basis2),
        iterations=iters,
    )
