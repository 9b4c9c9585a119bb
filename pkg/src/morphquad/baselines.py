"""Comparison controllers: geometric cascade PID and wrench-space LQR.

Both produce per-rotor thrusts through the current allocation matrix
and clamp them to the thrust box afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import expm

from . import quaternion as quat
from .dynamics import GRAVITY, RigidBodyModel
from .errors import ControllerError, DomainError, InvalidConfigError
from .geometry import VehicleProperties
from .nmpc import QuadrotorShootingModel
from .reference import ReferenceSample

E_Z = np.array([0.0, 0.0, 1.0])


def _positive_diag(v, name):
    a = np.broadcast_to(np.asarray(v, dtype=float), (3,)).copy()
    if np.any(a <= 0) or not np.all(np.isfinite(a)):
        raise InvalidConfigError(f"{name} gains must be positive")
    return a


def _split_state(x):
    xa = np.asarray(getattr(x, "as_array", lambda: x)(), dtype=float)
    if xa.shape != (13,) or not np.all(np.isfinite(xa)):
        raise DomainError("state must be 13 finite values")
    return xa


def _allocate(props: VehicleProperties, wrench, u_min, u_max):
    thrusts = props.thrusts_for_wrench(wrench)
    if not np.all(np.isfinite(thrusts)):
        raise ControllerError("allocation matrix is singular")
    return np.clip(thrusts, u_min, u_max)


@dataclass(frozen=True)
class PidGains:
    """Cascade gains.

    The attitude and rate gains are per-tick quantities at the control
    period ``tick``: the applied angular-acceleration gains are
    ``k_R / tick**2`` and ``k_w / tick``.
    """

    k_p: tuple = (2.0, 2.0, 2.0)
    k_v: tuple = (2.2, 2.2, 2.2)
    k_R: tuple = (0.25, 0.25, 0.25)
    k_w: tuple = (0.23, 0.23, 0.23)
    tick: float = 0.01
    u_min: float = 0.05
    u_max: float = 6.5
    gravity: float = GRAVITY

    def __post_init__(self):
        for name in ("k_p", "k_v", "k_R", "k_w"):
            _positive_diag(getattr(self, name), name)
        if not self.tick > 0:
            raise InvalidConfigError("tick must be positive")
        if not self.u_min < self.u_max:
            raise InvalidConfigError("u_min must be below u_max")

    @property
    def attitude_gain(self):
        return _positive_diag(self.k_R, "k_R") / self.tick**2

    @property
    def rate_gain(self):
        return _positive_diag(self.k_w, "k_w") / self.tick


def pid_desired_acceleration(x, ref: ReferenceSample, gains: PidGains):
    xa = _split_state(x)
    e_p = ref.position - xa[0:3]
    e_v = ref.velocity - xa[3:6]
    return (
        _positive_diag(gains.k_p, "k_p") * e_p + _positive_diag(gains.k_v, "k_v") * e_v
        + ref.acceleration + gains.gravity * E_Z
    )


def pid_wrench(x, ref: ReferenceSample, props: VehicleProperties, gains: PidGains = PidGains()):
    """Collective thrust and body torque of the geometric cascade."""
    xa = _split_state(x)
    a_des = pid_desired_acceleration(xa, ref, gains)
    rot = quat.to_rotation_matrix(xa[6:10])
    w = xa[10:13]
    norm = np.linalg.norm(a_des)
    if norm < 1e-9:
        b3 = rot[:, 2]
    else:
        b3 = a_des / norm
    heading = np.array([np.cos(ref.yaw), np.sin(ref.yaw), 0.0])
    b2 = np.cross(b3, heading)
    if np.linalg.norm(b2) < 1e-9:
        raise ControllerError("desired thrust axis parallel to heading")
    b2 /= np.linalg.norm(b2)
    rot_d = np.column_stack([np.cross(b2, b3), b2, b3])
    thrust = props.mass * float(a_des @ rot[:, 2])
    e_rot = 0.5 * quat.vee(rot_d.T @ rot - rot.T @ rot_d)
    e_w = w - rot.T @ rot_d @ ref.rates
    j = np.asarray(props.inertia)
    torque = j @ (-gains.attitude_gain * e_rot - gains.rate_gain * e_w) + np.cross(w, j @ w)
    return np.concatenate([[thrust], torque])


def pid_control(x, ref: ReferenceSample, props: VehicleProperties, gains: PidGains = PidGains()):
    """Per-rotor thrusts of the cascade PID, clamped to the box."""
    return _allocate(props, pid_wrench(x, ref, props, gains), gains.u_min, gains.u_max)


# ---------------------------------------------------------------- LQR


def solve_dare(a, b, q, r, tol=1e-12, max_iter=100):
    """Stabilizing solution of the discrete algebraic Riccati equation.

    Structure-preserving doubling: quadratic convergence, each sweep
    squares the horizon of the underlying Riccati recursion.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    q = np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    n = a.shape[0]
    eye = np.eye(n)
    g = b @ np.linalg.solve(r, b.T)
    h = q.copy()
    ak = a.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_iter):
            m = np.linalg.solve(eye + g @ h, np.hstack([ak, g]))
            w1, w2 = m[:, :n], m[:, n:]
            a_next = ak @ w1
            g_next = g + ak @ w2 @ ak.T
            h_next = h + ak.T @ h @ w1
            g_next = 0.5 * (g_next + g_next.T)
            h_next = 0.5 * (h_next + h_next.T)
            delta = np.max(np.abs(h_next - h)) / max(1.0, np.max(np.abs(h_next)))
            ak, g, h = a_next, g_next, h_next
            if not np.all(np.isfinite(h)):
                break
            if delta < tol:
                return h
    raise ControllerError("Riccati doubling did not converge")


def dare_residual(p, a, b, q, r):
    bp = b.T @ p
    return p - (a.T @ p @ a - a.T @ p @ b @ np.linalg.solve(r + bp @ b, bp @ a) + q)


@dataclass(frozen=True)
class LqrConfig:
    """Weights over the 12-D error state and the wrench ``(T, tau)``.

    ``r`` covers the three torques; ``thrust_weight`` is the collective
    thrust weight.  Gains are recomputed every ``recompute_every`` ticks.
    """

    q: float | tuple = 10.0
    r: tuple = (1.0, 1.0, 1.0)
    thrust_weight: float = 1.0
    dt: float = 0.01
    recompute_every: int = 1
    u_min: float = 0.05
    u_max: float = 6.5
    gravity: float = GRAVITY

    def __post_init__(self):
        q = np.broadcast_to(np.asarray(self.q, dtype=float), (12,))
        if np.any(q < 0):
            raise InvalidConfigError("LQR Q must be positive semidefinite")
        if np.any(np.asarray(self.r, dtype=float) <= 0) or not self.thrust_weight > 0:
            raise InvalidConfigError("LQR R must be positive definite")
        if not self.dt > 0 or self.recompute_every < 1:
            raise InvalidConfigError("dt must be positive and recompute_every at least 1")

    @property
    def Q(self):
        return np.diag(np.broadcast_to(np.asarray(self.q, dtype=float), (12,)))

    @property
    def R(self):
        return np.diag(np.concatenate([[self.thrust_weight], np.broadcast_to(np.asarray(self.r, dtype=float), (3,))]))


def lqr_model(ref: ReferenceSample, props: VehicleProperties, cfg: LqrConfig = LqrConfig()):
    """Discrete (ZOH) error dynamics around the reference, inputs in wrench space."""
    body = RigidBodyModel(props, gravity=cfg.gravity)
    x_ref = ref.state_array()
    wrench_ref = np.concatenate([[ref.collective_thrust(props.mass, cfg.gravity)], np.zeros(3)])
    u_ref = props.thrusts_for_wrench(wrench_ref)
    fx, fu = body.derivative_jacobians(x_ref, u_ref)
    out = QuadrotorShootingModel.chart_out(x_ref, x_ref)
    inp = QuadrotorShootingModel.chart_in(x_ref)
    a_c = out @ fx @ inp
    b_c = out @ fu @ np.asarray(props.allocation_inv)
    n, m = a_c.shape[0], b_c.shape[1]
    block = np.zeros((n + m, n + m))
    block[:n, :n] = a_c
    block[:n, n:] = b_c
    phi = expm(block * cfg.dt)
    return phi[:n, :n], phi[:n, n:], wrench_ref


def lqr_gain(ref: ReferenceSample, props: VehicleProperties, cfg: LqrConfig = LqrConfig()):
    a, b, wrench_ref = lqr_model(ref, props, cfg)
    p = solve_dare(a, b, cfg.Q, cfg.R)
    k = np.linalg.solve(cfg.R + b.T @ p @ b, b.T @ p @ a)
    return k, wrench_ref


def lqr_control(x, ref: ReferenceSample, props: VehicleProperties, cfg: LqrConfig = LqrConfig(), gain=None):
    """Per-rotor thrusts ``H^-1 (W_ref - K dx)`` clamped to the box."""
    xa = _split_state(x)
    k, wrench_ref = gain if gain is not None else lqr_gain(ref, props, cfg)
    dx = QuadrotorShootingModel.local(ref.state_array(), xa)
    return _allocate(props, wrench_ref - k @ dx, cfg.u_min, cfg.u_max)


class LqrController:
    """Stateful wrapper that refreshes the gain every ``recompute_every`` ticks."""

    def __init__(self, cfg: LqrConfig = LqrConfig()):
        self.cfg = cfg
        self._tick = 0
        self._gain: Optional[np.ndarray] = None

    def __call__(self, x, ref: ReferenceSample, props: VehicleProperties):
        if self._gain is None or self._tick % self.cfg.recompute_every == 0:
            self._gain, _ = lqr_gain(ref, props, self.cfg)
        self._tick += 1
        wrench_ref = np.concatenate([[ref.collective_thrust(props.mass, self.cfg.gravity)], np.zeros(3)])
        return lqr_control(x, ref, props, self.cfg, gain=(self._gain, wrench_ref))
