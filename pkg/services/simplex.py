# services/simplex.py
"""
Dense two-phase simplex with Bland's rule.

Works on a numpy tableau. Problems here are tiny (a few dozen rows at
most), so the tableau is rebuilt for every solve.
"""

import logging
from typing import List, Tuple

import numpy as np

from models.optimization import LinearProgram, LPResult
from services.errors import ConvergenceError, DomainError

logger = logging.getLogger(__name__)

_PIVOT_TOL = 1e-11
_FEAS_TOL = 1e-9


def _pivot(tableau: np.ndarray, row: int, col: int) -> None:
    tableau[row] /= tableau[row, col]
    for i in range(tableau.shape[0]):
        if i != row and tableau[i, col] != 0.0:
            tableau[i] -= tableau[i, col] * tableau[row]


def _iterate(tableau: np.ndarray, basis: List[int], n_cols: int, max_iter: int) -> Tuple[str, int]:
    """Run Bland's-rule pivots until optimal or unbounded."""
    for it in range(max_iter):
        reduced = tableau[-1, :n_cols]
        entering = np.flatnonzero(reduced < -_PIVOT_TOL)
        if entering.size == 0:
            return 'optimal', it
        col = int(entering[0])
        column = tableau[:-1, col]
        positive = column > _PIVOT_TOL
        if not positive.any():
            return 'unbounded', it
        ratios = np.full(column.shape, np.inf)
        ratios[positive] = tableau[:-1, -1][positive] / column[positive]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + _PIVOT_TOL * max(1.0, abs(best)))
        row = int(min(ties, key=lambda i: basis[i]))
        _pivot(tableau, row, col)
        basis[row] = col
    raise ConvergenceError(f"simplex did not terminate in {max_iter} pivots")


class _StandardForm:
    """
    Maps a bounded LinearProgram onto max c'·y, A y (<=,=,>=) b, y >= 0.

    Each original variable becomes an offset plus signed combination of
    non-negative columns.
    """

    def __init__(self, lp: LinearProgram):
        n = lp.n_vars
        lower, upper = lp.bounds()
        self.n = n
        self.columns: List[List[Tuple[int, float]]] = []  # per original var: (col, sign)
        self.offset = np.zeros(n)
        extra_rows = []
        n_cols = 0
        for j in range(n):
            lo, hi = lower[j], upper[j]
            if np.isfinite(lo):
                self.offset[j] = lo
                self.columns.append([(n_cols, 1.0)])
                if np.isfinite(hi):
                    extra_rows.append((n_cols, hi - lo))
                n_cols += 1
            elif np.isfinite(hi):
                self.offset[j] = hi
                self.columns.append([(n_cols, -1.0)])
                n_cols += 1
            else:
                self.columns.append([(n_cols, 1.0), (n_cols + 1, -1.0)])
                n_cols += 2
        self.n_cols = n_cols

        rows, senses, rhs = [], [], []
        for constraint in lp.constraints:
            coeffs = np.asarray(constraint.coefficients, dtype=float)
            rows.append(self.transform_row(coeffs))
            senses.append(constraint.sense)
            rhs.append(constraint.rhs - float(coeffs @ self.offset))
        for col, width in extra_rows:
            row = np.zeros(n_cols)
            row[col] = 1.0
            rows.append(row)
            senses.append('<=')
            rhs.append(width)
        self.A = np.array(rows).reshape(len(rows), n_cols)
        self.senses = senses
        self.b = np.array(rhs, dtype=float)
        objective = np.asarray(lp.objective, dtype=float)
        self.c = self.transform_row(objective)
        self.constant = float(objective @ self.offset)

    def transform_row(self, coeffs: np.ndarray) -> np.ndarray:
        row = np.zeros(self.n_cols)
        for j, entries in enumerate(self.columns):
            for col, sign in entries:
                row[col] += sign * coeffs[j]
        return row

    def recover(self, y: np.ndarray) -> np.ndarray:
        x = self.offset.copy()
        for j, entries in enumerate(self.columns):
            for col, sign in entries:
                x[j] += sign * y[col]
        return x


def validate(lp: LinearProgram) -> None:
    n = lp.n_vars
    if n == 0:
        raise DomainError("linear program has no variables")
    objective = np.asarray(lp.objective, dtype=float)
    if not np.all(np.isfinite(objective)):
        raise DomainError("objective contains non-finite entries")
    lower, upper = lp.bounds()
    if lower.shape != (n,) or upper.shape != (n,):
        raise DomainError("bounds must match the objective dimension")
    if np.isnan(lower).any() or np.isnan(upper).any():
        raise DomainError("bounds contain NaN")
    if np.any(lower > upper):
        raise DomainError("lower bound exceeds upper bound")
    for i, constraint in enumerate(lp.constraints):
        coeffs = np.asarray(constraint.coefficients, dtype=float)
        if coeffs.shape != (n,):
            raise DomainError(f"constraint {i} has {coeffs.size} coefficients, expected {n}")
        if not (np.all(np.isfinite(coeffs)) and np.isfinite(constraint.rhs)):
            raise DomainError(f"constraint {i} contains non-finite entries")
        if constraint.sense not in ('<=', '=', '>='):
            raise DomainError(f"constraint {i} has unknown sense {constraint.sense!r}")


def solve(lp: LinearProgram) -> LPResult:
    validate(lp)
    form = _StandardForm(lp)
    A, b = form.A.copy(), form.b.copy()
    senses = list(form.senses)
    m, n_cols = A.shape

    # make every right-hand side non-negative
    for i in range(m):
        if b[i] < 0:
            A[i] *= -1.0
            b[i] *= -1.0
            senses[i] = {'<=': '>=', '>=': '<=', '=': '='}[senses[i]]

    n_slack = sum(1 for s in senses if s != '=')
    n_art = sum(1 for s in senses if s != '<=')
    total = n_cols + n_slack + n_art
    tableau = np.zeros((m + 1, total + 1))
    tableau[:m, :n_cols] = A
    tableau[:m, -1] = b
    basis: List[int] = []
    slack_col, art_col = n_cols, n_cols + n_slack
    artificial = []
    for i, sense in enumerate(senses):
        if sense == '<=':
            tableau[i, slack_col] = 1.0
            basis.append(slack_col)
            slack_col += 1
        else:
            if sense == '>=':
                tableau[i, slack_col] = -1.0
                slack_col += 1
            tableau[i, art_col] = 1.0
            basis.append(art_col)
            artificial.append(art_col)
            art_col += 1

    max_iter = 200 * (m + total + 1)
    iterations = 0
    if artificial:
        tableau[-1, n_cols + n_slack:total] = 1.0
        for i, col in enumerate(basis):
            if col >= n_cols + n_slack:
                tableau[-1] -= tableau[i]
        _, it = _iterate(tableau, basis, total, max_iter)
        iterations += it
        if tableau[-1, -1] < -_FEAS_TOL * max(1.0, float(np.abs(b).max(initial=0.0))):
            logger.debug("phase one ended with infeasibility %.3e", -tableau[-1, -1])
            return LPResult(point=None, objective=None, status='infeasible', iterations=iterations)
        # drive artificials out of the basis; drop redundant rows
        keep = []
        for i in range(m):
            if basis[i] >= n_cols + n_slack:
                candidates = np.flatnonzero(np.abs(tableau[i, :n_cols + n_slack]) > 1e-9)
                if candidates.size == 0:
                    continue
                _pivot(tableau, i, int(candidates[0]))
                basis[i] = int(candidates[0])
            keep.append(i)
        tableau = np.vstack([tableau[keep][:, list(range(n_cols + n_slack)) + [total]],
                             np.zeros((1, n_cols + n_slack + 1))])
        basis = [basis[i] for i in keep]
    else:
        tableau = np.delete(tableau, np.s_[n_cols + n_slack:total], axis=1)

    width = n_cols + n_slack
    tableau[-1, :] = 0.0
    tableau[-1, :n_cols] = -form.c
    for i, col in enumerate(basis):
        if tableau[-1, col] != 0.0:
            tableau[-1] -= tableau[-1, col] * tableau[i]
    status, it = _iterate(tableau, basis, width, max_iter)
    iterations += it
    if status == 'unbounded':
        return LPResult(point=None, objective=None, status='unbounded', iterations=iterations)

    y = np.zeros(width)
    for i, col in enumerate(basis):
        y[col] = tableau[i, -1]
    x = form.recover(y[:n_cols])
    value = float(np.asarray(lp.objective, dtype=float) @ x)
    return LPResult(point=x, objective=value, status='optimal', iterations=iterations)
