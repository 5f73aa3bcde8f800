"""Dense two-phase simplex with Bland's rule.

Solves ``maximize c.x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  x >= 0``.
Problems in this package have a handful of variables, so the tableau is kept
as a plain numpy array and no attempt is made at numerical refinement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-11
FEAS_TOL = 1e-9
MAX_ITER = 10_000


class NumericalFailure(RuntimeError):
    pass


@dataclass
class LPResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None
    objective: float | None


def _pivot(T: np.ndarray, basis: list[int], row: int, col: int) -> None:
    T[row] /= T[row, col]
    for i in range(T.shape[0]):
        if i != row and T[i, col] != 0.0:
            T[i] -= T[i, col] * T[row]
    basis[row] = col


def _run(T: np.ndarray, basis: list[int], allowed: int) -> str:
    """Maximize the objective stored (negated) in the last row of T.

    Columns ``>= allowed`` (except the rhs) never enter the basis.
    """
    m = T.shape[0] - 1
    for _ in range(MAX_ITER):
        obj = T[-1, :allowed]
        entering = next((j for j in range(allowed) if obj[j] < -PIVOT_TOL), None)
        if entering is None:
            return "optimal"
        col = T[:m, entering]
        best_ratio, leave = np.inf, None
        for i in range(m):
            if col[i] > PIVOT_TOL:
                ratio = T[i, -1] / col[i]
                if ratio < best_ratio - 1e-12 or (
                        abs(ratio - best_ratio) <= 1e-12 and leave is not None
                        and basis[i] < basis[leave]):
                    best_ratio, leave = ratio, i
        if leave is None:
            return "unbounded"
        _pivot(T, basis, leave, entering)
    raise NumericalFailure("simplex iteration limit reached")


def solve_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None) -> LPResult:
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, dtype=float).reshape(-1, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq

    # columns: original | slacks | artificials | rhs
    n_cols = n + m_ub + m + 1
    T = np.zeros((m + 1, n_cols))
    T[:m_ub, :n] = A_ub
    T[:m_ub, n:n + m_ub] = np.eye(m_ub)
    T[:m_ub, -1] = b_ub
    T[m_ub:m, :n] = A_eq
    T[m_ub:m, -1] = b_eq
    neg = T[:m, -1] < 0
    T[:m][neg] *= -1.0
    art0 = n + m_ub
    T[:m, art0:art0 + m] = np.eye(m)
    basis = list(range(art0, art0 + m))

    # phase 1: maximize -sum(artificials)
    T[-1, art0:art0 + m] = 1.0
    for i in range(m):
        T[-1] -= T[i]
    _run(T, basis, art0)
    if -T[-1, -1] > FEAS_TOL * max(1.0, float(np.abs(T[:m, -1]).max(initial=0.0))):
        return LPResult("infeasible", None, None)

    # drive remaining artificials out of the basis; drop redundant rows
    keep = []
    for i in range(m):
        if basis[i] >= art0:
            col = next((j for j in range(art0) if abs(T[i, j]) > PIVOT_TOL), None)
            if col is None:
                continue
            _pivot(T, basis, i, col)
        keep.append(i)
    T = np.vstack([T[keep], T[-1:]])
    basis = [basis[i] for i in keep]
    T = np.delete(T, np.s_[art0:art0 + m], axis=1)

    # phase 2
    T[-1] = 0.0
    T[-1, :n] = -c
    for i, b in enumerate(basis):
        if T[-1, b] != 0.0:
            T[-1] -= T[-1, b] * T[i]
    status = _run(T, basis, art0)
    if status != "optimal":
        return LPResult(status, None, None)
    x = np.zeros(art0)
    for i, b in enumerate(basis):
        x[b] = T[i, -1]
    x = x[:n]
    if not np.all(np.isfinite(x)):
        raise NumericalFailure("non-finite solution")
    return LPResult("optimal", x, float(c @ x))
