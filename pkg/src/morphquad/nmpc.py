"""Thrust-level NMPC for the morphing quadrotor.

The optimal control problem tracks a reference window over ``N`` steps
of ``dt`` with per-rotor thrust boxes.  Vehicle properties are sampled
once per call and held over the horizon.  Errors live in 12 tangent
coordinates: position, velocity, attitude error vector, body rates.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import quaternion as quat
from .dynamics import GRAVITY, NU, NX, ExternalWrench, RigidBodyModel, State
from .errors import DomainError, InvalidConfigError
from .geometry import VehicleProperties
from .ocp import MultipleShootingSolver, tracking_cost

NE = 12  # tangent / error dimension


def _diag3(v, name):
    a = np.broadcast_to(np.asarray(v, dtype=float), (3,)).copy()
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise InvalidConfigError(f"{name} weights must be finite and non-negative")
    return a


@dataclass(frozen=True)
class NmpcConfig:
    horizon: int = 20
    dt: float = 0.05
    q_position: tuple = (200.0, 200.0, 200.0)
    q_velocity: tuple = (1.0, 1.0, 1.0)
    q_attitude: tuple = (100.0, 100.0, 100.0)
    q_rates: tuple = (1.0, 1.0, 1.0)
    q_terminal: Optional[tuple] = None  # 12 diagonal entries; None reuses the stage weights
    r: tuple = (1.0, 1.0, 1.0, 1.0)
    u_min: float = 0.05
    u_max: float = 6.5
    max_iterations: int = 1
    tolerance: float = 1e-6
    substeps: int = 1
    gravity: float = GRAVITY

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise InvalidConfigError(f"horizon must be a positive integer, got {self.horizon}")
        if not self.dt > 0:
            raise InvalidConfigError(f"dt must be positive, got {self.dt}")
        if not self.u_min < self.u_max:
            raise InvalidConfigError(f"u_min {self.u_min} must be below u_max {self.u_max}")
        if self.max_iterations < 1 or self.substeps < 1:
            raise InvalidConfigError("max_iterations and substeps must be at least 1")
        if self.tolerance < 0:
            raise InvalidConfigError("tolerance must be non-negative")
        np.diag(self.Q)
        if self.q_terminal is not None and np.asarray(self.q_terminal).shape != (NE,):
            raise InvalidConfigError("q_terminal needs 12 entries")
        if np.any(np.diag(self.Q_N) < 0) or np.any(np.diag(self.R) < 0):
            raise InvalidConfigError("weights must be non-negative")

    @property
    def Q(self):
        return np.diag(np.concatenate([
            _diag3(self.q_position, "position"), _diag3(self.q_velocity, "velocity"),
            _diag3(self.q_attitude, "attitude"), _diag3(self.q_rates, "rate"),
        ]))

    @property
    def Q_N(self):
        return self.Q if self.q_terminal is None else np.diag(np.asarray(self.q_terminal, dtype=float))

    @property
    def R(self):
        r = np.broadcast_to(np.asarray(self.r, dtype=float), (NU,))
        return np.diag(r)

    def scaled(self, factor):
        """Same problem with every weight multiplied by ``factor``."""
        f = float(factor)
        qn = None if self.q_terminal is None else tuple(f * np.asarray(self.q_terminal))
        return NmpcConfig(**{**self.__dict__, "q_position": tuple(f * np.asarray(self.q_position)),
                             "q_velocity": tuple(f * np.asarray(self.q_velocity)),
                             "q_attitude": tuple(f * np.asarray(self.q_attitude)),
                             "q_rates": tuple(f * np.asarray(self.q_rates)),
                             "q_terminal": qn, "r": tuple(f * np.asarray(self.r, dtype=float))})


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ReferenceWindow:
    """Reference states ``(N+1, 13)`` and inputs ``(N, 4)``.

    ``inputs`` may be omitted; :meth:`resolved_inputs` then returns the
    hover-balance thrusts of the given vehicle.
    """

    states: np.ndarray
    inputs: Optional[np.ndarray] = None

    def __post_init__(self):
        s = np.array(self.states, dtype=float)
        if s.ndim != 2 or s.shape[1] != NX or s.shape[0] < 2:
            raise DomainError(f"reference states must have shape (N+1, 13), got {s.shape}")
        if np.any(np.abs(np.linalg.norm(s[:, 6:10], axis=1) - 1.0) > 1e-9):
            raise DomainError("reference quaternions must be unit norm")
        object.__setattr__(self, "states", _readonly(s))
        if self.inputs is not None:
            u = np.array(self.inputs, dtype=float)
            if u.shape != (s.shape[0] - 1, NU):
                raise DomainError(f"reference inputs must have shape ({s.shape[0] - 1}, 4), got {u.shape}")
            object.__setattr__(self, "inputs", _readonly(u))

    @property
    def horizon(self):
        return self.states.shape[0] - 1

    def resolved_inputs(self, props: VehicleProperties, gravity=GRAVITY):
        if self.inputs is not None:
            return np.array(self.inputs)
        return np.tile(props.hover_thrusts(gravity), (self.horizon, 1))

    @classmethod
    def hover(cls, position, horizon, yaw=0.0):
        x = State(position=position, attitude=quat.from_axis_angle((0, 0, 1), yaw)).as_array()
        return cls(np.tile(x, (horizon + 1, 1)))


@dataclass(frozen=True, eq=False)
class NmpcSolution:
    inputs: np.ndarray  # (N, 4)
    states: np.ndarray  # (N+1, 13) predicted
    kkt: float
    iterations: int
    qp_iterations: int
    solve_time: float
    active_lower: np.ndarray
    active_upper: np.ndarray
    cost: float
    kkt_history: tuple = field(default=())

    def __post_init__(self):
        for name in ("inputs", "states"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        for name in ("active_lower", "active_upper"):
            a = np.array(getattr(self, name), dtype=bool)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def u0(self):
        return np.array(self.inputs[0])

    def shifted(self, fraction):
        """Warm start advanced by ``fraction`` of a horizon step.

        Linear interpolation between nodes, last node held; quaternions
        are renormalized after interpolation.
        """
        n = self.inputs.shape[0]
        grid = np.arange(n + 1) + fraction
        idx = np.clip(np.floor(grid).astype(int), 0, n)
        nxt = np.clip(idx + 1, 0, n)
        w = np.clip(grid - idx, 0.0, 1.0)[:, None]
        xs = (1 - w) * self.states[idx] + w * self.states[nxt]
        xs[:, 6:10] = quat.normalize(xs[:, 6:10])
        ui = np.clip(idx[:-1], 0, n - 1)
        un = np.clip(idx[:-1] + 1, 0, n - 1)
        us = (1 - w[:-1]) * self.inputs[ui] + w[:-1] * self.inputs[un]
        return xs, us


def quaternion_error(q, q_r):
    """Vector part of ``canon(q^-1 ⊗ q_r)``; zero iff ``q = ±q_r``."""
    q = np.asarray(q, dtype=float)
    q_r = np.asarray(q_r, dtype=float)
    for name, v in (("q", q), ("q_r", q_r)):
        if np.any(np.abs(np.linalg.norm(v, axis=-1) - 1.0) > 1e-6):
            raise DomainError(f"{name} must be a unit quaternion")
    return quat.canonical(quat.multiply(quat.conjugate(q), q_r))[..., 1:]


def state_error(xs, x_refs):
    """12-D error ``(p - p_r, v - v_r, attitude error, w - w_r)``."""
    xs = np.asarray(xs, dtype=float)
    x_refs = np.asarray(x_refs, dtype=float)
    return np.concatenate([
        xs[..., 0:6] - x_refs[..., 0:6],
        quaternion_error(xs[..., 6:10], x_refs[..., 6:10]),
        xs[..., 10:13] - x_refs[..., 10:13],
    ], axis=-1)


def cost(xs, us, ref: ReferenceWindow, cfg: NmpcConfig, props: Optional[VehicleProperties] = None):
    xs = np.asarray(xs, dtype=float)
    us = np.asarray(us, dtype=float)
    n = ref.horizon
    if xs.shape != (n + 1, NX) or us.shape != (n, NU):
        raise DomainError(f"trajectory shapes {xs.shape}, {us.shape} do not match horizon {n}")
    if ref.inputs is None and props is None:
        raise DomainError("reference inputs missing and no vehicle given for hover thrusts")
    u_ref = ref.resolved_inputs(props, cfg.gravity) if ref.inputs is None else np.asarray(ref.inputs)
    return tracking_cost(state_error(xs, ref.states), us - u_ref, cfg.Q, cfg.Q_N, cfg.R)


class QuadrotorShootingModel:
    """Quadrotor dynamics on the ``R^9 x S^3`` state manifold for the OCP solver."""

    nx = NE
    nu = NU

    def __init__(self, props: VehicleProperties, dt, substeps=1, wrench: Optional[ExternalWrench] = None, gravity=GRAVITY):
        self.body = RigidBodyModel(props, wrench, gravity)
        self.dt = float(dt)
        self.substeps = int(substeps)

    def step(self, xs, us):
        h = self.dt / self.substeps
        out = np.asarray(xs, dtype=float)
        for _ in range(self.substeps):
            out = self.body.step(out, us, h)
        return out

    def raw_jacobians(self, xs, us):
        h = self.dt / self.substeps
        out, a, b = self.body.step_jacobians(np.asarray(xs, dtype=float), us, h)
        for _ in range(self.substeps - 1):
            out, a2, b2 = self.body.step_jacobians(out, us, h)
            a = a2 @ a
            b = a2 @ b + b2
        return out, a, b

    @staticmethod
    def chart_in(xs):
        """Derivative of ``retract(x, .)`` at zero: ``(..., 13, 12)``."""
        q = np.asarray(xs)[..., 6:10]
        batch = q.shape[:-1]
        d = np.zeros(batch + (NX, NE))
        d[..., 0:6, 0:6] = np.eye(6)
        d[..., 10:13, 9:12] = np.eye(3)
        d[..., 6:10, 6:9] = 0.5 * _left_batch(q)[..., :, 1:]
        return d

    @staticmethod
    def chart_out(x_refs, ys):
        """Derivative of ``local(x_ref, .)`` at ``y``: ``(..., 12, 13)``."""
        q_inv = quat.conjugate(np.asarray(x_refs)[..., 6:10])
        rel = quat.multiply(q_inv, np.asarray(ys)[..., 6:10])
        sign = np.where(rel[..., 0] < 0.0, -1.0, 1.0)
        batch = rel.shape[:-1]
        d = np.zeros(batch + (NE, NX))
        d[..., 0:6, 0:6] = np.eye(6)
        d[..., 9:12, 10:13] = np.eye(3)
        d[..., 6:9, 6:10] = 2.0 * sign[..., None, None] * _left_batch(q_inv)[..., 1:, :]
        return d

    def linearize(self, xs, us, x_next):
        f, a, b = self.raw_jacobians(xs, us)
        p = self.chart_out(x_next, f)
        return f, p @ a @ self.chart_in(xs), p @ b

    @staticmethod
    def local(x_ref, x):
        x_ref = np.asarray(x_ref, dtype=float)
        x = np.asarray(x, dtype=float)
        return np.concatenate([
            x[..., 0:6] - x_ref[..., 0:6],
            quat.boxminus(x[..., 6:10], x_ref[..., 6:10]),
            x[..., 10:13] - x_ref[..., 10:13],
        ], axis=-1)

    @staticmethod
    def retract(x, dx):
        x = np.asarray(x, dtype=float)
        dx = np.asarray(dx, dtype=float)
        dth = dx[..., 6:9]
        # keep huge early-iteration steps inside the chart
        n = np.linalg.norm(dth, axis=-1, keepdims=True)
        dth = np.where(n > 1.9, dth * (1.9 / np.maximum(n, 1e-300)), dth)
        out = np.empty_like(x)
        out[..., 0:6] = x[..., 0:6] + dx[..., 0:6]
        out[..., 6:10] = quat.normalize(quat.boxplus(x[..., 6:10], dth))
        out[..., 10:13] = x[..., 10:13] + dx[..., 9:12]
        return out

    @staticmethod
    def error(xs, x_refs):
        e = state_error(xs, x_refs)
        batch = e.shape[:-1]
        jac = np.zeros(batch + (NE, NE))
        jac[..., 0:6, 0:6] = np.eye(6)
        jac[..., 9:12, 9:12] = np.eye(3)
        q_inv = quat.conjugate(np.asarray(xs)[..., 6:10])
        rel = quat.canonical(quat.multiply(q_inv, np.asarray(x_refs)[..., 6:10]))
        w = rel[..., 0]
        jac[..., 6:9, 6:9] = -0.5 * w[..., None, None] * np.eye(3) + 0.5 * _skew(rel[..., 1:])
        return e, jac


def _left_batch(q):
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return np.stack([
        np.stack([w, -x, -y, -z], axis=-1),
        np.stack([x, w, -z, y], axis=-1),
        np.stack([y, z, w, -x], axis=-1),
        np.stack([z, -y, x, w], axis=-1),
    ], axis=-2)


def _skew(v):
    x, y, z = np.moveaxis(v, -1, 0)
    zero = 0 * x
    return np.stack([
        np.stack([zero, -z, y], axis=-1),
        np.stack([z, zero, -x], axis=-1),
        np.stack([-y, x, zero], axis=-1),
    ], axis=-2)


def linearize_dynamics(x, u, props: VehicleProperties, dt, x_next=None, substeps=1, wrench=None, gravity=GRAVITY):
    """Discrete step sensitivities in 12-D error coordinates.

    ``A`` maps a perturbation of ``x`` (tangent chart at ``x``) to the
    perturbation of the successor expressed around ``x_next`` (default:
    the successor itself); ``c`` is the defect ``local(x_next, f(x, u))``.
    """
    xa = np.asarray(getattr(x, "as_array", lambda: x)(), dtype=float)
    ua = np.asarray(getattr(u, "thrusts", u), dtype=float)
    model = QuadrotorShootingModel(props, dt, substeps, wrench, gravity)
    f = model.step(xa, ua)
    ref = f if x_next is None else np.asarray(getattr(x_next, "as_array", lambda: x_next)(), dtype=float)
    _, a, b = model.linearize(xa, ua, ref)
    return a, b, model.local(ref, f)


def solve(
    x_now,
    ref: ReferenceWindow,
    props: VehicleProperties,
    cfg: NmpcConfig = NmpcConfig(),
    warm_start: Optional[NmpcSolution] = None,
    wrench: Optional[ExternalWrench] = None,
    shift: float = 0.0,
) -> NmpcSolution:
    """Run up to ``cfg.max_iterations`` Gauss-Newton SQP iterations.

    Without a warm start the reference trajectory seeds the shooting
    nodes.  ``shift`` advances a warm start by that fraction of ``dt``.
    """
    t0 = time.perf_counter()
    x0 = np.asarray(getattr(x_now, "as_array", lambda: x_now)(), dtype=float)
    if not (np.all(np.isfinite(x0)) and abs(np.linalg.norm(x0[6:10]) - 1.0) < 1e-6):
        raise DomainError("initial state must be finite with a unit quaternion")
    if ref.horizon != cfg.horizon:
        raise DomainError(f"reference window has {ref.horizon} steps, config expects {cfg.horizon}")
    u_ref = ref.resolved_inputs(props, cfg.gravity)
    model = QuadrotorShootingModel(props, cfg.dt, cfg.substeps, wrench, cfg.gravity)
    solver = MultipleShootingSolver(model, cfg.Q, cfg.Q_N, cfg.R, cfg.u_min, cfg.u_max)
    if warm_start is not None:
        xs, us = warm_start.shifted(shift)
        ws = np.where(warm_start.active_lower, -1, np.where(warm_start.active_upper, 1, 0)).reshape(-1)
        if shift:
            ws = np.zeros_like(ws)
    else:
        xs = np.array(ref.states)
        xs[0] = x0
        us = np.clip(u_ref, cfg.u_min, cfg.u_max)
        ws = None
    res = solver.solve(x0, ref.states, u_ref, xs, us, cfg.max_iterations, cfg.tolerance, ws)
    return NmpcSolution(
        inputs=res.inputs,
        states=res.states,
        kkt=res.kkt,
        iterations=res.iterations,
        qp_iterations=res.qp_iterations,
        solve_time=time.perf_counter() - t0,
        active_lower=(res.working_set == -1).reshape(res.inputs.shape),
        active_upper=(res.working_set == 1).reshape(res.inputs.shape),
        cost=res.cost,
        kkt_history=tuple(res.kkt_history),
    )
