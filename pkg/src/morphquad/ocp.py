"""Gauss-Newton SQP for input-constrained optimal control.

Multiple-shooting transcription: every node carries its own state, the
dynamics enter as defect constraints.  Each iteration linearizes all
shooting intervals, condenses the states away into a dense QP in the
input increments and solves it with the active-set box-QP solver.  A
full step is taken (real-time iteration style, no line search).

Models supply their own state manifold through ``retract``/``local`` so
attitude can live on unit quaternions while increments stay 3-D.

Model interface::

    nx, nu                          tangent and input dimensions
    step(xs, us)                    batched discrete dynamics
    linearize(xs, us, x_next)       -> (f(xs, us), A, B) in the tangent
                                       chart at xs (input) and x_next (output)
    local(x_ref, x)                 tangent coordinates of x around x_ref
    retract(x, dx)                  inverse of ``local``
    error(xs, x_refs)               -> (e, E): cost residual and its
                                       tangent Jacobian
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError
from .qp import FREE, LOWER, UPPER, solve_box_qp


@dataclass
class OcpResult:
    states: np.ndarray
    inputs: np.ndarray
    kkt: float
    iterations: int
    qp_iterations: int
    working_set: np.ndarray
    cost: float
    kkt_history: list = field(default_factory=list)


def tracking_cost(e, du, q, q_n, r):
    """Stage plus terminal cost of residuals ``e`` (N+1 rows) and input errors ``du``."""
    stage = np.einsum("ki,ij,kj->", e[:-1], q, e[:-1]) + np.einsum("ki,ij,kj->", du, r, du)
    return float(stage + e[-1] @ q_n @ e[-1])


class MultipleShootingSolver:
    """Solve ``min sum e'Qe + du'R du + e_N'Q_N e_N`` subject to dynamics and boxes."""

    def __init__(self, model, q, q_n, r, u_min, u_max):
        self.model = model
        self.q = np.asarray(q, dtype=float)
        self.q_n = np.asarray(q_n, dtype=float)
        self.r = np.asarray(r, dtype=float)
        self.u_min = np.asarray(u_min, dtype=float)
        self.u_max = np.asarray(u_max, dtype=float)

    def _linearize(self, x0, xs, us, x_ref, u_ref):
        m = self.model
        n = us.shape[0]
        nx, nu = m.nx, m.nu
        d0 = m.local(xs[0], x0)
        f, a, b = m.linearize(xs[:-1], us, xs[1:])
        c = m.local(xs[1:], f)
        e, ej = m.error(xs, x_ref)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise SolverError("non-finite linearization", {"defects": c})
        gam = np.zeros((n + 1, nx))
        big = np.zeros((n + 1, nx, n * nu))
        gam[0] = d0
        for k in range(n):
            big[k + 1] = a[k] @ big[k]
            big[k + 1][:, k * nu:(k + 1) * nu] += b[k]
            gam[k + 1] = a[k] @ gam[k] + c[k]
        w = np.broadcast_to(self.q, (n + 1,) + self.q.shape).copy()
        w[-1] = self.q_n
        m_k = ej[1:] @ big[1:]
        r_k = e[1:] + np.einsum("kij,kj->ki", ej[1:], gam[1:])
        wm = w[1:] @ m_k
        h = np.einsum("kin,kim->nm", m_k, wm) + np.kron(np.eye(n), self.r)
        du = us - u_ref
        g = np.einsum("kin,ki->n", wm, r_k) + (du @ self.r.T).reshape(-1)
        h = 0.5 * (h + h.T)
        return dict(d0=d0, c=c, e=e, big=big, gam=gam, h=h, g=g, du=du)

    def _kkt(self, lin, us):
        g = lin["g"].copy()
        flat = us.reshape(-1)
        lo = np.broadcast_to(self.u_min, us.shape).reshape(-1)
        hi = np.broadcast_to(self.u_max, us.shape).reshape(-1)
        g[(flat <= lo) & (g > 0)] = 0.0
        g[(flat >= hi) & (g < 0)] = 0.0
        parts = [np.max(np.abs(g), initial=0.0), np.max(np.abs(lin["c"]), initial=0.0), np.max(np.abs(lin["d0"]))]
        return float(max(parts))

    def solve(self, x0, x_ref, u_ref, xs_guess, us_guess, max_iter=1, tol=1e-8, working_set=None):
        m = self.model
        xs = np.array(xs_guess, dtype=float)
        us = np.array(us_guess, dtype=float)
        x_ref = np.asarray(x_ref, dtype=float)
        u_ref = np.asarray(u_ref, dtype=float)
        n, nu = us.shape
        lo = np.broadcast_to(self.u_min, us.shape)
        hi = np.broadcast_to(self.u_max, us.shape)
        us = np.clip(us, lo, hi)
        ws = np.zeros(n * nu, dtype=int) if working_set is None else np.array(working_set, dtype=int)
        history = []
        qp_iters = 0
        iterations = 0
        lin = self._linearize(x0, xs, us, x_ref, u_ref)
        kkt = self._kkt(lin, us)
        history.append(kkt)
        while kkt > tol and iterations < max_iter:
            flat = us.reshape(-1)
            res = solve_box_qp(
                lin["h"], lin["g"], lo.reshape(-1) - flat, hi.reshape(-1) - flat, working_set=ws,
            )
            qp_iters += res.iterations
            ws = res.working_set
            step = res.x
            dxs = np.einsum("kin,n->ki", lin["big"], step) + lin["gam"]
            xs = m.retract(xs, dxs)
            xs[0] = x0
            us = np.clip(us + step.reshape(n, nu), lo, hi)
            flat = us.reshape(-1)
            flat[ws == LOWER] = lo.reshape(-1)[ws == LOWER]
            flat[ws == UPPER] = hi.reshape(-1)[ws == UPPER]
            us = flat.reshape(n, nu)
            iterations += 1
            lin = self._linearize(x0, xs, us, x_ref, u_ref)
            kkt = self._kkt(lin, us)
            history.append(kkt)
        if not np.all(np.isfinite(us)) or not np.all(np.isfinite(xs)):
            raise SolverError("non-finite iterate", {"kkt": kkt, "iterations": iterations})
        flat = us.reshape(-1)
        ws = np.where(flat <= lo.reshape(-1), LOWER, np.where(flat >= hi.reshape(-1), UPPER, FREE))
        cost = tracking_cost(lin["e"], lin["du"], self.q, self.q_n, self.r)
        return OcpResult(xs, us, kkt, iterations, qp_iters, ws, cost, history)


class LinearModel:
    """Euclidean linear dynamics ``x+ = A x + B u``; cost residual ``x - x_ref``."""

    def __init__(self, a, b):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.nx, self.nu = self.b.shape

    def step(self, xs, us):
        return xs @ self.a.T + us @ self.b.T

    def linearize(self, xs, us, x_next):
        n = xs.shape[0]
        return self.step(xs, us), np.broadcast_to(self.a, (n,) + self.a.shape), np.broadcast_to(self.b, (n,) + self.b.shape)

    def local(self, x_ref, x):
        return x - x_ref

    def retract(self, x, dx):
        return x + dx

    def error(self, xs, x_refs):
        n = xs.shape[0]
        return xs - x_refs, np.broadcast_to(np.eye(self.nx), (n, self.nx, self.nx))
