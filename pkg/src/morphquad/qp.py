"""Dense primal active-set solver for box-constrained convex QPs.

    minimize   0.5 x'Hx + g'x
    subject to lower <= x <= upper

The iterate stays feasible throughout; variables in the working set sit
exactly on their bound (assigned, never approached numerically).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import SolverError

FREE, LOWER, UPPER = 0, -1, 1


@dataclass
class BoxQPResult:
    x: np.ndarray
    working_set: np.ndarray  # per variable: FREE, LOWER or UPPER
    iterations: int
    objective: float

    @property
    def active_lower(self):
        return self.working_set == LOWER

    @property
    def active_upper(self):
        return self.working_set == UPPER


def _subspace_step(h, grad, free):
    p = np.zeros_like(grad)
    if not free.any():
        return p
    hff = h[np.ix_(free, free)]
    try:
        factor = cho_factor(hff, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SolverError("QP Hessian is not positive definite on the free subspace") from exc
    p[free] = cho_solve(factor, -grad[free], check_finite=False)
    return p


def solve_box_qp(h, g, lower, upper, x0=None, working_set=None, max_iter=None, tol=1e-10) -> BoxQPResult:
    """Solve the box QP; ``working_set`` warm-starts the active bounds."""
    h = np.asarray(h, dtype=float)
    g = np.asarray(g, dtype=float)
    n = g.size
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (n,)).copy()
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (n,)).copy()
    if np.any(lower > upper):
        raise SolverError("infeasible box: a lower bound exceeds its upper bound")
    ws = np.zeros(n, dtype=int) if working_set is None else np.array(working_set, dtype=int)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    x = np.clip(x, lower, upper)
    ws[lower == upper] = LOWER
    x[ws == LOWER] = lower[ws == LOWER]
    x[ws == UPPER] = upper[ws == UPPER]
    max_iter = max_iter or 10 * n + 50
    scale = max(1.0, float(np.max(np.abs(g))) if n else 1.0)

    for it in range(1, max_iter + 1):
        free = ws == FREE
        grad = h @ x + g
        p = _subspace_step(h, grad, free)
        alpha, block, side = 1.0, -1, FREE
        neg = free & (p < 0)
        pos = free & (p > 0)
        if neg.any():
            r = (lower[neg] - x[neg]) / p[neg]
            i = int(np.argmin(r))
            if r[i] < alpha:
                alpha, block, side = float(r[i]), int(np.flatnonzero(neg)[i]), LOWER
        if pos.any():
            r = (upper[pos] - x[pos]) / p[pos]
            i = int(np.argmin(r))
            if r[i] < alpha:
                alpha, block, side = float(r[i]), int(np.flatnonzero(pos)[i]), UPPER
        x[free] += alpha * p[free]
        if block >= 0:
            ws[block] = side
            x[block] = lower[block] if side == LOWER else upper[block]
            continue
        grad = h @ x + g
        lam = np.full(n, np.inf)
        lam[ws == LOWER] = grad[ws == LOWER]
        lam[ws == UPPER] = -grad[ws == UPPER]
        lam[lower == upper] = np.inf
        j = int(np.argmin(lam)) if n else 0
        if n == 0 or lam[j] >= -tol * scale:
            x = np.clip(x, lower, upper)
            return BoxQPResult(x, ws, it, float(0.5 * x @ h @ x + g @ x))
        ws[j] = FREE
    raise SolverError("active-set QP hit its iteration limit", {"iterations": max_iter})
