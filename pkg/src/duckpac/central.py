"""Centralized LP solve used as the reference for the distributed solver."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import InfeasibleError, IterationLimitError, ValidationError

IIS_MAX_ROWS = 400


@dataclass
class CentralSolution:
    x: np.ndarray
    objective: float
    eq_residual: float
    ineq_residual: float
    status: str = "optimal"


def _linprog(c, G, b, H, d, lb, ub, tol, max_iter=None):
    options = {"primal_feasibility_tolerance": max(tol, 1e-10),
               "dual_feasibility_tolerance": max(tol, 1e-10),
               "presolve": True}
    if max_iter is not None:
        options["maxiter"] = int(max_iter)
    return linprog(
        c,
        A_ub=H if H.shape[0] else None, b_ub=d if H.shape[0] else None,
        A_eq=G if G.shape[0] else None, b_eq=b if G.shape[0] else None,
        bounds=np.column_stack([lb, ub]),
        method="highs",
        options=options,
    )


def solve_centralized(prob, tol=1e-8, max_iter=None) -> CentralSolution:
    """Solve ``min c^T x  s.t.  Gx = b, Hx <= d, lb <= x <= ub``.

    ``prob`` is any object exposing ``c, G, b, H, d, lb, ub`` (e.g. a
    :class:`~duckpac.opf.CanonicalProblem`). HiGHS dual simplex/IPM does the
    work; the returned residuals are recomputed from ``x``.

    Raises
    ------
    InfeasibleError
        With ``rows`` set to an irreducible infeasible subset of constraint
        rows (equalities first, inequalities offset by the number of
        equalities) for small problems, or to the rows violated by a minimum
        total-violation point otherwise.
    IterationLimitError
        If HiGHS stops on its iteration limit.
    """
    c, G, b, H, d, lb, ub = _unpack(prob)
    if np.any(lb > ub):
        bad = np.flatnonzero(lb > ub)
        raise InfeasibleError(f"variable bounds crossed at columns {bad[:10].tolist()}", [])
    res = _linprog(c, G, b, H, d, lb, ub, tol, max_iter)
    if res.status == 1:
        raise IterationLimitError(f"LP iteration limit: {res.message}")
    if res.status == 2:
        rows = infeasible_rows(prob, tol)
        raise InfeasibleError(f"problem infeasible; violated rows {rows[:20]}", rows)
    if res.status != 0:
        raise ValidationError(f"LP solver failed: {res.message}")
    x = np.clip(res.x, lb, ub)
    eq = float(np.max(np.abs(G @ x - b), initial=0.0))
    ineq = float(max(np.max(H @ x - d, initial=0.0), 0.0))
    return CentralSolution(x, float(c @ x), eq, ineq)


def _unpack(prob):
    c = np.asarray(prob.c, dtype=float)
    n = len(c)
    G = sp.csr_matrix(prob.G) if prob.G is not None else sp.csr_matrix((0, n))
    H = sp.csr_matrix(prob.H) if prob.H is not None else sp.csr_matrix((0, n))
    b = np.asarray(prob.b, dtype=float).reshape(-1)
    d = np.asarray(prob.d, dtype=float).reshape(-1)
    lb = np.asarray(prob.lb, dtype=float)
    ub = np.asarray(prob.ub, dtype=float)
    return c, G, b, H, d, lb, ub


def _feasible(G, b, H, d, lb, ub, tol):
    n = G.shape[1]
    res = _linprog(np.zeros(n), G, b, H, d, lb, ub, tol)
    return res.status == 0


def infeasible_rows(prob, tol=1e-8) -> list[int]:
    """Rows of an infeasible LP that cannot all hold together.

    A minimum total-violation (elastic) solve identifies violated rows. When the
    problem has at most ``IIS_MAX_ROWS`` rows, a deletion filter then shrinks
    the full row set to an irreducible infeasible subset.
    """
    c, G, b, H, d, lb, ub = _unpack(prob)
    m_eq, m_in = G.shape[0], H.shape[0]
    n = len(c)
    if m_eq + m_in <= IIS_MAX_ROWS:
        keep_eq = list(range(m_eq))
        keep_in = list(range(m_in))
        for r in range(m_eq):
            trial = [i for i in keep_eq if i != r]
            if not _feasible(G[trial], b[trial], H[keep_in], d[keep_in], lb, ub, tol):
                keep_eq = trial
        for r in range(m_in):
            trial = [i for i in keep_in if i != r]
            if not _feasible(G[keep_eq], b[keep_eq], H[trial], d[trial], lb, ub, tol):
                keep_in = trial
        return keep_eq + [m_eq + i for i in keep_in]
    # elastic: G x + sp - sn = b, H x - s <= d, minimise total slack
    I_eq = sp.identity(m_eq, format="csr")
    Ge = sp.hstack([G, I_eq, -I_eq, sp.csr_matrix((m_eq, m_in))], format="csr")
    He = sp.hstack([H, sp.csr_matrix((m_in, 2 * m_eq)), -sp.identity(m_in)], format="csr")
    ce = np.concatenate([np.zeros(n), np.ones(2 * m_eq + m_in)])
    lbe = np.concatenate([lb, np.zeros(2 * m_eq + m_in)])
    ube = np.concatenate([ub, np.full(2 * m_eq + m_in, np.inf)])
    res = _linprog(ce, Ge, b, He, d, lbe, ube, tol)
    if res.status != 0:
        return []
    s = res.x[n:]
    viol_eq = np.flatnonzero(s[:m_eq] + s[m_eq:2 * m_eq] > 10 * tol)
    viol_in = np.flatnonzero(s[2 * m_eq:] > 10 * tol)
    return viol_eq.tolist() + (m_eq + viol_in).tolist()
