"""Dense two-phase revised simplex with Bland's rule.

Small and exact enough for occupancy LPs of tabular MDPs. Bland's rule
(lowest-index entering column, ties in the ratio test to the lowest-index
basic variable) rules out cycling and makes the returned vertex a
deterministic function of the input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DimensionError, InfeasibleError, UnboundedError

PIVOT_TOL = 1e-11
FEAS_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class LpSolution:
    """Optimal basic solution.

    ``basis`` lists the original variables that are basic. ``binding`` flags
    the inequality rows that hold with equality (slack below ``FEAS_TOL``).
    """

    x: np.ndarray
    objective: float
    basis: tuple
    binding: np.ndarray
    iterations: int


def _simplex(a, b, c, basis, max_iter, allowed):
    """Revised simplex on ``min c x, A x = b, x >= 0`` from a feasible basis (in place)."""
    m, n = a.shape
    for it in range(max_iter):
        bmat = a[:, basis]
        x_b = np.linalg.solve(bmat, b)
        y = np.linalg.solve(bmat.T, c[basis])
        reduced = c - y @ a
        reduced[basis] = 0.0
        cand = np.flatnonzero((reduced < -PIVOT_TOL) & allowed)
        if cand.size == 0:
            return x_b, it
        j = int(cand[0])
        d = np.linalg.solve(bmat, a[:, j])
        pos = d > PIVOT_TOL
        if not np.any(pos):
            raise UnboundedError("LP objective is unbounded")
        ratios = np.full(m, np.inf)
        ratios[pos] = np.maximum(x_b[pos], 0.0) / d[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + PIVOT_TOL * max(1.0, best))
        r = int(min(ties, key=lambda i: basis[i]))
        basis[r] = j
    raise ConvergenceError(f"simplex did not terminate in {max_iter} pivots", iterations=max_iter)


def solve_lp(objective, a_ub=None, b_ub=None, a_eq=None, b_eq=None, bounds=None,
             maximize: bool = False, max_iter: int = 10_000) -> LpSolution:
    """Optimize ``objective @ x`` subject to ``a_ub x <= b_ub``, ``a_eq x = b_eq``, bounds.

    ``bounds`` is a list of ``(lo, hi)`` pairs with ``None`` for infinite;
    the default is ``x >= 0``. Raises ``InfeasibleError`` or
    ``UnboundedError``.
    """
    c0 = np.asarray(objective, dtype=float).ravel()
    nv = c0.size
    a_ub = np.zeros((0, nv)) if a_ub is None else np.atleast_2d(np.asarray(a_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    a_eq = np.zeros((0, nv)) if a_eq is None else np.atleast_2d(np.asarray(a_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    if a_ub.shape != (b_ub.size, nv) or a_eq.shape != (b_eq.size, nv):
        raise DimensionError("constraint matrices do not match the objective length / right-hand sides")
    bounds = [(0.0, None)] * nv if bounds is None else list(bounds)
    if len(bounds) != nv:
        raise DimensionError("need one (lo, hi) pair per variable")
    sign = -1.0 if maximize else 1.0

    # x = shift + T z with z >= 0; extra rows for finite upper bounds
    cols, shift = [], np.zeros(nv)
    extra_rows, extra_b = [], []
    for i, (lo, hi) in enumerate(bounds):
        lo = -np.inf if lo is None else float(lo)
        hi = np.inf if hi is None else float(hi)
        if lo > hi:
            raise InfeasibleError(f"variable {i} has empty bounds [{lo}, {hi}]")
        if np.isfinite(lo):
            shift[i] = lo
            cols.append((i, 1.0))
            if np.isfinite(hi):
                extra_rows.append(len(cols) - 1)
                extra_b.append(hi - lo)
        elif np.isfinite(hi):
            shift[i] = hi
            cols.append((i, -1.0))
        else:
            cols.append((i, 1.0))
            cols.append((i, -1.0))
    t = np.zeros((nv, len(cols)))
    for k, (i, s) in enumerate(cols):
        t[i, k] = s
    nz = len(cols)
    n_ub = b_ub.size + len(extra_rows)
    ub_rows = np.vstack([a_ub @ t, np.eye(nz)[extra_rows]]) if extra_rows else a_ub @ t
    ub_rhs = np.concatenate([b_ub - a_ub @ shift, extra_b])
    a = np.block([[ub_rows, np.eye(n_ub)], [a_eq @ t, np.zeros((b_eq.size, n_ub))]])
    b = np.concatenate([ub_rhs, b_eq - a_eq @ shift])
    c = np.concatenate([sign * c0 @ t, np.zeros(n_ub)])
    flip = b < 0
    a[flip] *= -1.0
    b[flip] *= -1.0
    m, n = a.shape

    # phase 1 with one artificial per row
    a1 = np.hstack([a, np.eye(m)])
    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    basis = list(range(n, n + m))
    allowed = np.ones(n + m, dtype=bool)
    x_b, it1 = _simplex(a1, b, c1, basis, max_iter, allowed)
    if c1[basis] @ x_b > FEAS_TOL * max(1.0, np.abs(b).max(initial=0.0)):
        raise InfeasibleError("LP is infeasible")
    # pivot remaining (zero-level) artificials out, dropping redundant rows
    keep_rows = list(range(m))
    for r in range(m):
        if basis[r] < n:
            continue
        row = np.linalg.solve(a1[keep_rows][:, [basis[k] for k in keep_rows]].T,
                              np.eye(len(keep_rows))[keep_rows.index(r)])
        alpha = row @ a1[keep_rows][:, :n]
        alpha[[basis[k] for k in keep_rows if basis[k] < n]] = 0.0
        cand = np.flatnonzero(np.abs(alpha) > 1e-9)
        if cand.size:
            basis[r] = int(cand[0])
        else:
            keep_rows.remove(r)
    a2, b2 = a[keep_rows], b[keep_rows]
    basis2 = [basis[r] for r in keep_rows]
    x_b, it2 = _simplex(a2, b2, c, basis2, max_iter, np.ones(n, dtype=bool))
    z = np.zeros(n)
    z[basis2] = x_b
    z[np.abs(z) < 1e-13] = 0.0
    x = shift + t @ z[:nz]
    slack = z[nz:nz + b_ub.size]
    binding = np.abs(slack) <= FEAS_TOL * max(1.0, np.abs(b_ub).max(initial=0.0))
    orig = tuple(sorted({cols[k][0] for k in basis2 if k < nz}))
    return LpSolution(x, float(c0 @ x), orig, binding, it1 + it2)
