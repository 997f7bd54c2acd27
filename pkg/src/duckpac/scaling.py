"""Diagonal equilibration of a canonical problem.

With ``x = D y`` the problem becomes ``min (Dc)^T y`` subject to
``R G D y = R b``, ``S H D y <= S d`` and ``lb/D <= y <= ub/D``. Columns are
scaled by their box width and rows to unit 2-norm. The objective value is
unchanged, so a solver run on the scaled copy reports comparable objectives.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass
class Equilibration:
    col: np.ndarray      # x = col * y
    eq_row: np.ndarray   # scaled eq row = original row / eq_row
    ineq_row: np.ndarray

    def to_original(self, y):
        return self.col * np.asarray(y, dtype=float)

    def to_scaled(self, x):
        return np.asarray(x, dtype=float) / self.col

    @classmethod
    def identity(cls, prob):
        return cls(np.ones(prob.n), np.ones(len(prob.b)), np.ones(len(prob.d)))


def _row_norms(A):
    n = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
    n[n == 0] = 1.0
    return n


def equilibrate(prob, min_width=1e-3):
    """Scaled copy of ``prob`` and the :class:`Equilibration` that maps back.

    Column ``k`` is scaled by ``max(ub_k - lb_k, min_width)``; infinite widths
    get scale 1. Rows are then normalised to unit 2-norm.
    """
    width = np.asarray(prob.ub, dtype=float) - np.asarray(prob.lb, dtype=float)
    col = np.where(np.isfinite(width), np.maximum(width, min_width), 1.0)
    D = sp.diags(col)
    G = sp.csr_matrix(prob.G) @ D
    H = sp.csr_matrix(prob.H) @ D
    rg, rh = _row_norms(G), _row_norms(H)
    scaled = dataclasses.replace(
        prob,
        c=np.asarray(prob.c) * col,
        G=sp.csr_matrix(sp.diags(1.0 / rg) @ G),
        b=np.asarray(prob.b) / rg,
        H=sp.csr_matrix(sp.diags(1.0 / rh) @ H),
        d=np.asarray(prob.d) / rh,
        lb=np.asarray(prob.lb) / col,
        ub=np.asarray(prob.ub) / col,
    )
    return scaled, Equilibration(col, rg, rh)
