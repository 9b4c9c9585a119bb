"""Reference trajectories with flat-output attitude and body rates.

A reference sample carries position derivatives up to acceleration plus
the attitude and body rates a thrust-vectoring vehicle needs to follow
them at a fixed heading.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quaternion as quat
from .dynamics import GRAVITY
from .errors import DomainError

E_Z = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True, eq=False)
class ReferenceSample:
    t: float
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    acceleration: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attitude: np.ndarray = field(default_factory=lambda: quat.IDENTITY.copy())
    rates: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0

    def state_array(self):
        return np.concatenate([self.position, self.velocity, self.attitude, self.rates])

    def collective_thrust(self, mass, gravity=GRAVITY):
        """Thrust magnitude a point mass needs to follow the acceleration."""
        return float(mass * np.linalg.norm(self.acceleration + gravity * E_Z))


def flat_sample(t, p, v, a, j, yaw=0.0, gravity=GRAVITY) -> ReferenceSample:
    """Attitude and body rates from position derivatives at constant heading."""
    acc = np.asarray(a, dtype=float) + gravity * E_Z
    norm = np.linalg.norm(acc)
    if norm < 1e-9:
        raise DomainError("reference demands free fall; attitude undefined")
    j = np.asarray(j, dtype=float)
    b3 = acc / norm
    b3_dot = (j - (b3 @ j) * b3) / norm
    heading = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    n = np.cross(b3, heading)
    n_norm = np.linalg.norm(n)
    if n_norm < 1e-9:
        raise DomainError("thrust axis aligned with heading; attitude undefined")
    b2 = n / n_norm
    n_dot = np.cross(b3_dot, heading)
    b2_dot = (n_dot - (b2 @ n_dot) * b2) / n_norm
    b1 = np.cross(b2, b3)
    b1_dot = np.cross(b2_dot, b3) + np.cross(b2, b3_dot)
    rot = np.column_stack([b1, b2, b3])
    # R^T dR/dt = [w]x
    rates = np.array([b3 @ b2_dot, b1 @ b3_dot, b2 @ b1_dot])
    return ReferenceSample(
        float(t), np.asarray(p, dtype=float), np.asarray(v, dtype=float), np.asarray(a, dtype=float),
        quat.from_rotation_matrix(rot), rates, float(yaw),
    )


@dataclass(frozen=True)
class Figure8:
    """Lemniscate of Gerono ``(A sin th, A sin th cos th, z0)``.

    At cruise ``th = w t`` and the peak speed, reached at the crossing
    point, equals ``v_max``.  With ``ramp > 0`` the phase rate rises from
    zero to ``w`` along a smoothstep over the first ``ramp`` seconds, so
    the reference starts at rest.
    """

    v_max: float
    amplitude: float = 2.0
    altitude: float = 1.0
    yaw: float = 0.0
    ramp: float = 0.0

    def __post_init__(self):
        if not self.v_max > 0:
            raise DomainError(f"v_max must be positive, got {self.v_max}")
        if not self.amplitude > 0:
            raise DomainError(f"amplitude must be positive, got {self.amplitude}")
        if self.ramp < 0:
            raise DomainError("ramp duration must be non-negative")

    @property
    def omega(self):
        return self.v_max / (np.sqrt(2.0) * self.amplitude)

    @property
    def period(self):
        return 2.0 * np.pi / self.omega

    def phase(self, t):
        """Phase and its first three time derivatives."""
        w, tr = self.omega, self.ramp
        if tr == 0.0 or t >= tr:
            return w * (t - 0.5 * tr), w, 0.0, 0.0
        if t <= 0.0:
            return 0.0, 0.0, 0.0, 0.0
        x = t / tr
        return w * tr * (x**3 - 0.5 * x**4), w * (3 * x**2 - 2 * x**3), w * (6 * x - 6 * x**2) / tr, w * (6 - 12 * x) / tr**2

    def derivatives(self, t):
        a = self.amplitude
        th, d1, d2, d3 = self.phase(t)
        s, c, s2, c2 = np.sin(th), np.cos(th), np.sin(2 * th), np.cos(2 * th)
        p = np.array([a * s, 0.5 * a * s2, self.altitude])
        v = a * d1 * np.array([c, c2, 0.0])
        acc = a * np.array([-s * d1**2 + c * d2, -2.0 * s2 * d1**2 + c2 * d2, 0.0])
        jerk = a * np.array([
            -c * d1**3 - 3.0 * s * d1 * d2 + c * d3,
            -4.0 * c2 * d1**3 - 6.0 * s2 * d1 * d2 + c2 * d3,
            0.0,
        ])
        return p, v, acc, jerk

    def __call__(self, t, gravity=GRAVITY) -> ReferenceSample:
        return flat_sample(t, *self.derivatives(t), yaw=self.yaw, gravity=gravity)


def figure8_reference(v_max, size=2.0, t=0.0, altitude=1.0):
    """Sample of the figure-8 with half-width ``size`` at time ``t``."""
    return Figure8(v_max, size, altitude)(t)


@dataclass(frozen=True)
class Hover:
    position: tuple = (0.0, 0.0, 1.0)
    yaw: float = 0.0

    def __call__(self, t, gravity=GRAVITY) -> ReferenceSample:
        z = np.zeros(3)
        return flat_sample(t, np.asarray(self.position, dtype=float), z, z, z, self.yaw, gravity)


def _quintic(s):
    """Minimum-jerk blend and its first three derivatives for ``s`` in [0, 1]."""
    return (
        10 * s**3 - 15 * s**4 + 6 * s**5,
        30 * s**2 - 60 * s**3 + 30 * s**4,
        60 * s - 180 * s**2 + 120 * s**3,
        60 - 360 * s + 360 * s**2,
    )


@dataclass(frozen=True)
class Waypoints:
    """Rest-to-rest minimum-jerk segments through ``(time, position)`` pairs."""

    points: tuple
    yaw: float = 0.0

    def __post_init__(self):
        if len(self.points) < 1:
            raise DomainError("at least one waypoint is required")
        times = [float(t) for t, _ in self.points]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise DomainError("waypoint times must be strictly increasing")

    def derivatives(self, t):
        pts = self.points
        z = np.zeros(3)
        if t <= pts[0][0]:
            return np.asarray(pts[0][1], dtype=float), z, z, z
        for (t0, p0), (t1, p1) in zip(pts, pts[1:]):
            if t < t1:
                span = t1 - t0
                s = (t - t0) / span
                d = np.asarray(p1, dtype=float) - np.asarray(p0, dtype=float)
                b, b1, b2, b3 = _quintic(s)
                return np.asarray(p0, dtype=float) + b * d, b1 * d / span, b2 * d / span**2, b3 * d / span**3
        return np.asarray(pts[-1][1], dtype=float), z, z, z

    def __call__(self, t, gravity=GRAVITY) -> ReferenceSample:
        return flat_sample(t, *self.derivatives(t), yaw=self.yaw, gravity=gravity)
