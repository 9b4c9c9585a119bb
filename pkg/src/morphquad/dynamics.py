"""Rigid-body dynamics of the quadrotor with time-variant properties.

State layout (13 floats): world position, world velocity, attitude
quaternion ``(w, x, y, z)`` mapping body to world, body angular rate.
Mass properties and allocation are held constant over a step.

The array-level functions broadcast over leading axes so the NMPC can
propagate and linearize a whole horizon in one call.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import quaternion as quat
from .errors import DomainError, IntegrationDivergedError
from .geometry import VehicleProperties

GRAVITY = 9.81
NX = 13
NU = 4

TRAJECTORY_COLUMNS = (
    "t", "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "wx", "wy", "wz",
    "t1", "t2", "t3", "t4", "L",
)


def _vec(v, n, name):
    a = np.array(v, dtype=float).reshape(-1)
    if a.shape != (n,):
        raise DomainError(f"{name} must have {n} entries, got shape {a.shape}")
    return a


@dataclass(frozen=True, eq=False)
class State:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attitude: np.ndarray = field(default_factory=lambda: quat.IDENTITY.copy())
    rates: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name, n in (("position", 3), ("velocity", 3), ("attitude", 4), ("rates", 3)):
            a = _vec(getattr(self, name), n, name)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def as_array(self):
        return np.concatenate([self.position, self.velocity, self.attitude, self.rates])

    @classmethod
    def from_array(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(x[0:3], x[3:6], x[6:10], x[10:13])

    def is_valid(self, tol=1e-9):
        x = self.as_array()
        return bool(np.all(np.isfinite(x)) and abs(np.linalg.norm(self.attitude) - 1.0) <= tol)


@dataclass(frozen=True, eq=False)
class ControlInput:
    """Per-rotor thrusts [N]."""

    thrusts: np.ndarray

    def __post_init__(self):
        a = _vec(self.thrusts, 4, "thrusts")
        a.setflags(write=False)
        object.__setattr__(self, "thrusts", a)

    def within(self, u_min, u_max):
        return bool(np.all(self.thrusts >= u_min) and np.all(self.thrusts <= u_max))

    def clamped(self, u_min, u_max):
        return ControlInput(np.clip(self.thrusts, u_min, u_max))


@dataclass(frozen=True, eq=False)
class ExternalWrench:
    """Disturbance force (world frame), torque (body frame) and linear drag."""

    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    torque: np.ndarray = field(default_factory=lambda: np.zeros(3))
    drag: float = 0.0

    def __post_init__(self):
        for name in ("force", "torque"):
            a = _vec(getattr(self, name), 3, name)
            if not np.all(np.isfinite(a)):
                raise DomainError(f"{name} must be finite")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not (np.isfinite(self.drag) and self.drag >= 0):
            raise DomainError(f"drag coefficient must be non-negative, got {self.drag}")


NO_WRENCH = ExternalWrench()


def wrench_from_thrusts(thrusts, allocation):
    """Collective thrust and body torque ``H @ t``."""
    w = np.asarray(allocation, dtype=float) @ np.asarray(getattr(thrusts, "thrusts", thrusts), dtype=float)
    return float(w[0]), w[1:]


def rotor_speed(thrust, k_t):
    """Rotor speed [rad/s] producing ``thrust`` with ``thrust = k_t * speed**2``."""
    thrust = np.asarray(thrust, dtype=float)
    if np.any(thrust < 0):
        raise DomainError("rotor thrust must be non-negative")
    out = np.sqrt(thrust / k_t)
    return float(out) if out.ndim == 0 else out


class RigidBodyModel:
    """Continuous dynamics and RK4 step for fixed properties.

    Works on raw arrays; ``x`` has a trailing axis of 13 and ``u`` of 4.
    """

    def __init__(self, props: VehicleProperties, wrench: Optional[ExternalWrench] = None, gravity=GRAVITY):
        wrench = wrench or NO_WRENCH
        self.props = props
        self.mass = props.mass
        self.inertia = np.asarray(props.inertia)
        self.inertia_inv = np.asarray(props.inertia_inv)
        self.allocation = np.asarray(props.allocation)
        self.gravity = float(gravity)
        self.drag = float(wrench.drag)
        self.force = np.asarray(wrench.force)
        self.torque = np.asarray(wrench.torque)

    def derivative(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        v = x[..., 3:6]
        q = x[..., 6:10]
        w = x[..., 10:13]
        wrench = u @ self.allocation.T
        qw, qx, qy, qz = np.moveaxis(q, -1, 0)
        z_body = np.stack([2 * (qx * qz + qw * qy), 2 * (qy * qz - qw * qx), 1 - 2 * (qx * qx + qy * qy)], axis=-1)
        acc = (wrench[..., :1] * z_body + self.force - self.drag * v) / self.mass
        acc = acc + np.array([0.0, 0.0, -self.gravity])
        wq = np.concatenate([np.zeros(w.shape[:-1] + (1,)), w], axis=-1)
        qdot = 0.5 * quat.multiply(q, wq)
        jw = w @ self.inertia.T
        wdot = (wrench[..., 1:] - np.cross(w, jw) + self.torque) @ self.inertia_inv.T
        return np.concatenate([v, acc, qdot, wdot], axis=-1)

    def derivative_jacobians(self, x, u):
        """Jacobians of :meth:`derivative` w.r.t. the raw state and inputs."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        batch = x.shape[:-1]
        q = x[..., 6:10]
        w = x[..., 10:13]
        qw, qx, qy, qz = np.moveaxis(q, -1, 0)
        wrench = u @ self.allocation.T
        thrust = wrench[..., 0]
        fx = np.zeros(batch + (NX, NX))
        fu = np.zeros(batch + (NX, NU))
        fx[..., 0:3, 3:6] = np.eye(3)
        fx[..., 3:6, 3:6] = -self.drag / self.mass * np.eye(3)
        dz = np.stack(
            [
                np.stack([2 * qy, 2 * qz, 2 * qw, 2 * qx], axis=-1),
                np.stack([-2 * qx, -2 * qw, 2 * qz, 2 * qy], axis=-1),
                np.stack([0 * qw, -4 * qx, -4 * qy, 0 * qz], axis=-1),
            ],
            axis=-2,
        )
        fx[..., 3:6, 6:10] = thrust[..., None, None] / self.mass * dz
        z_body = np.stack([2 * (qx * qz + qw * qy), 2 * (qy * qz - qw * qx), 1 - 2 * (qx * qx + qy * qy)], axis=-1)
        fu[..., 3:6, :] = z_body[..., :, None] * self.allocation[0] / self.mass
        # qdot = 0.5 q ⊗ (0, w) = 0.5 R(0, w) q = 0.5 L(q) (0, w)
        wx, wy, wz = np.moveaxis(w, -1, 0)
        zero = 0 * wx
        right = np.stack(
            [
                np.stack([zero, -wx, -wy, -wz], axis=-1),
                np.stack([wx, zero, wz, -wy], axis=-1),
                np.stack([wy, -wz, zero, wx], axis=-1),
                np.stack([wz, wy, -wx, zero], axis=-1),
            ],
            axis=-2,
        )
        fx[..., 6:10, 6:10] = 0.5 * right
        left_vec = np.stack(
            [
                np.stack([-qx, -qy, -qz], axis=-1),
                np.stack([qw, -qz, qy], axis=-1),
                np.stack([qz, qw, -qx], axis=-1),
                np.stack([-qy, qx, qw], axis=-1),
            ],
            axis=-2,
        )
        fx[..., 6:10, 10:13] = 0.5 * left_vec
        jw = w @ self.inertia.T
        # d(w x Jw)/dw = [w]x J - [Jw]x
        gyro = _skew_batch(w) @ self.inertia - _skew_batch(jw)
        fx[..., 10:13, 10:13] = -self.inertia_inv @ gyro
        fu[..., 10:13, :] = self.inertia_inv @ self.allocation[1:]
        return fx, fu

    def step(self, x, u, dt):
        """One RK4 step followed by quaternion renormalization."""
        k1 = self.derivative(x, u)
        k2 = self.derivative(x + 0.5 * dt * k1, u)
        k3 = self.derivative(x + 0.5 * dt * k2, u)
        k4 = self.derivative(x + dt * k3, u)
        out = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[..., 6:10] /= np.linalg.norm(out[..., 6:10], axis=-1, keepdims=True)
        return out

    def step_jacobians(self, x, u, dt):
        """RK4 step and its exact Jacobians w.r.t. raw state and inputs.

        Differentiates the four stages by the chain rule, then the final
        quaternion normalization.
        """
        x = np.asarray(x, dtype=float)
        eye = np.eye(NX)
        k1 = self.derivative(x, u)
        a1, b1 = self.derivative_jacobians(x, u)
        x2 = x + 0.5 * dt * k1
        k2 = self.derivative(x2, u)
        f2, g2 = self.derivative_jacobians(x2, u)
        a2 = f2 @ (eye + 0.5 * dt * a1)
        b2 = g2 + 0.5 * dt * f2 @ b1
        x3 = x + 0.5 * dt * k2
        k3 = self.derivative(x3, u)
        f3, g3 = self.derivative_jacobians(x3, u)
        a3 = f3 @ (eye + 0.5 * dt * a2)
        b3 = g3 + 0.5 * dt * f3 @ b2
        x4 = x + dt * k3
        k4 = self.derivative(x4, u)
        f4, g4 = self.derivative_jacobians(x4, u)
        a4 = f4 @ (eye + dt * a3)
        b4 = g4 + dt * f4 @ b3
        raw = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        a = eye + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        b = dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        q = raw[..., 6:10]
        norm = np.linalg.norm(q, axis=-1, keepdims=True)
        qn = q / norm
        proj = (np.eye(4) - qn[..., :, None] * qn[..., None, :]) / norm[..., None]
        a[..., 6:10, :] = proj @ a[..., 6:10, :]
        b[..., 6:10, :] = proj @ b[..., 6:10, :]
        out = raw.copy()
        out[..., 6:10] = qn
        return out, a, b


def _skew_batch(v):
    x, y, z = np.moveaxis(v, -1, 0)
    zero = 0 * x
    return np.stack(
        [
            np.stack([zero, -z, y], axis=-1),
            np.stack([z, zero, -x], axis=-1),
            np.stack([-y, x, zero], axis=-1),
        ],
        axis=-2,
    )


def state_derivative(x: State, u, props: VehicleProperties, wrench: Optional[ExternalWrench] = None, gravity=GRAVITY):
    """Time derivative of ``x`` as a raw 13-vector."""
    thrusts = getattr(u, "thrusts", u)
    return RigidBodyModel(props, wrench, gravity).derivative(x.as_array(), np.asarray(thrusts, dtype=float))


def step_rk4(x: State, u, props: VehicleProperties, wrench: Optional[ExternalWrench] = None, dt=1e-3, gravity=GRAVITY) -> State:
    """Advance ``x`` by ``dt`` with inputs and properties held constant."""
    if not dt > 0:
        raise DomainError(f"time step must be positive, got {dt}")
    thrusts = np.asarray(getattr(u, "thrusts", u), dtype=float)
    out = RigidBodyModel(props, wrench, gravity).step(x.as_array(), thrusts, dt)
    if not np.all(np.isfinite(out)):
        raise IntegrationDivergedError(f"non-finite state after RK4 step of {dt} s")
    return State.from_array(out)


def write_trajectory_csv(path, rows, controller: Optional[str] = None):
    """Write trajectory rows (sequences ordered as ``TRAJECTORY_COLUMNS``).

    With ``controller`` set, a trailing ``controller`` column is added.
    """
    header = list(TRAJECTORY_COLUMNS) + (["controller"] if controller is not None else [])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            cells = [repr(float(v)) for v in row]
            if controller is not None:
                cells.append(controller)
            writer.writerow(cells)


def read_trajectory_csv(path):
    """Return ``(columns, array)`` for a trajectory CSV (numeric columns only)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        numeric = [i for i, h in enumerate(header) if h in TRAJECTORY_COLUMNS]
        data = [[float(r[i]) for i in numeric] for r in reader]
    return [header[i] for i in numeric], np.array(data).reshape(-1, len(numeric))
