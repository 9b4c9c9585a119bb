"""Parametric ring layout and its fit to measured mass properties.

Only endpoint mass properties of the airframe are known (inertia at the
largest and smallest size, COG and total mass).  ``RingLayout`` is a
physically plausible family of layouts: four identical L-shaped corner
modules carrying the motors, and a battery, servo and flight-computer
stack each riding on one of the modules.  The free
dimensions and mount offsets are fitted by bounded least squares.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import least_squares

from . import geometry as geo
from .errors import CalibrationError, InvalidConfigError

# Fixed part masses [kg]; the modules take whatever is left of the total.
MOTOR_MASS = 0.035
BATTERY_MASS = 0.21
SERVO_MASS = 0.065
BOARD_MASS = 0.20


@dataclass(frozen=True)
class CalibrationTargets:
    inertia_large: tuple = (0.0380, 0.0459, 0.0823)
    inertia_small: tuple = (0.0144, 0.0188, 0.0317)
    cog_large: tuple = (-0.027, -0.009, 0.000)
    mass: float = 1.665
    L_large: float = geo.L_MAX
    L_small: float = geo.L_MIN

    def check(self):
        for name in ("inertia_large", "inertia_small"):
            j = np.asarray(getattr(self, name), dtype=float)
            if j.shape != (3,) or np.any(j <= 0):
                raise CalibrationError(f"{name} must be three positive moments", {name: float("nan")})
            a, b, c = np.sort(j)
            if a + b < c:
                raise CalibrationError(
                    f"{name} {tuple(j)} violates the triangle inequality; no rigid body has these moments",
                    {name: float(c - a - b)},
                )
        if not self.mass > 0:
            raise CalibrationError("target mass must be positive", {"mass": self.mass})


# name: (default, lower bound, upper bound).  Parts riding on a module are
# placed by their distance along the module's diagonal (``*_s``, measured
# at the largest size), a sideways offset (``*_t``) and a height.
FREE_PARAMETERS = {
    "module_side": (0.14, 0.06, 0.20),
    "module_height": (0.05, 0.005, 0.10),
    "module_cutout": (0.07, 0.01, 0.15),
    "module_inset": (0.06, 0.0, 0.14),
    "module_z": (0.0, -0.03, 0.03),
    "motor_z": (-0.03, -0.06, 0.0),
    "battery_s": (0.2, 0.1, 0.3),
    "battery_t": (0.0, -0.15, 0.15),
    "battery_z": (0.03, -0.06, 0.08),
    "servo_s": (0.2, 0.1, 0.3),
    "servo_t": (0.0, -0.15, 0.15),
    "servo_z": (0.02, -0.06, 0.08),
    "board_s": (0.2, 0.1, 0.3),
    "board_t": (0.0, -0.15, 0.15),
    "board_z": (0.04, -0.06, 0.10),
}

# host module index (0..3, counter-clockwise from +x+y) for each riding part
HOSTS = {"battery": 2, "board": 1, "servo": 3}


@dataclass(frozen=True)
class RingLayout:
    """Free parameters of the ring airframe (lengths in meters)."""

    module_side: float = 0.14
    module_height: float = 0.05
    module_cutout: float = 0.07
    module_inset: float = 0.06
    module_z: float = 0.0
    motor_z: float = -0.03
    battery_s: float = 0.2
    battery_t: float = 0.0
    battery_z: float = 0.03
    servo_s: float = 0.2
    servo_t: float = 0.0
    servo_z: float = 0.02
    board_s: float = 0.2
    board_t: float = 0.0
    board_z: float = 0.04
    total_mass: float = 1.665
    motor_radius: float = 0.014
    motor_height: float = 0.022
    battery_size: tuple = (0.035, 0.075, 0.045)
    servo_size: tuple = (0.04, 0.02, 0.04)
    board_size: tuple = (0.10, 0.09, 0.03)
    rotor_arm_ratio: float = 0.5
    L_min: float = geo.L_MIN
    L_max: float = geo.L_MAX
    k_t: float = geo.K_THRUST
    k_c: float = geo.K_TORQUE

    @property
    def module_mass(self):
        return (self.total_mass - 4 * MOTOR_MASS - BATTERY_MASS - SERVO_MASS - BOARD_MASS) / 4.0

    def free_vector(self):
        return np.array([getattr(self, k) for k in FREE_PARAMETERS])

    def with_free_vector(self, x):
        return dataclasses.replace(self, **{k: float(v) for k, v in zip(FREE_PARAMETERS, x)})

    def build(self) -> geo.MorphGeometry:
        if self.module_mass <= 0:
            raise InvalidConfigError(f"total mass {self.total_mass} leaves nothing for the modules")
        a, b = self.module_side, self.module_cutout
        # L-shaped module: bounding square minus the corner facing the center
        cut = geo.Cutout((b, b, self.module_height), (-(a - b) / 2.0, -(a - b) / 2.0, 0.0))
        ratio = self.rotor_arm_ratio
        parts = []
        for i in range(4):
            theta = i * np.pi / 2.0
            module_mount = geo.MountRule(
                (-self.module_inset, -self.module_inset, self.module_z), (ratio, ratio, 0.0)
            ).rotated(theta)
            parts.append(geo.ComponentSpec(
                f"module{i + 1}", geo.MODULE, self.module_mass, (a, a, self.module_height),
                module_mount, theta, (cut,),
            ))
            motor_mount = geo.MountRule((0.0, 0.0, self.motor_z), (ratio, ratio, 0.0)).rotated(theta)
            parts.append(geo.ComponentSpec(
                f"motor{i + 1}", geo.CYLINDER, MOTOR_MASS, (self.motor_radius, self.motor_height), motor_mount,
            ))
        for name, mass, size in (
            ("battery", BATTERY_MASS, self.battery_size),
            ("servo", SERVO_MASS, self.servo_size),
            ("board", BOARD_MASS, self.board_size),
        ):
            mount = self._riding_mount(
                HOSTS[name], getattr(self, f"{name}_s"), getattr(self, f"{name}_t"), getattr(self, f"{name}_z")
            )
            parts.append(geo.ComponentSpec(name, geo.CUBOID, mass, size, mount))
        return geo.MorphGeometry(
            tuple(parts),
            geo.square_rotor_mounts(ratio, self.motor_z),
            geo.SPIN_SIGNS,
            self.L_min,
            self.L_max,
            self.k_t,
            self.k_c,
        )

    def _riding_mount(self, host, s, t, z):
        # diagonal of the host module moves at sqrt(2) * ratio per unit L
        along = np.array([1.0, 1.0, 0.0]) / np.sqrt(2.0)
        side = np.array([-1.0, 1.0, 0.0]) / np.sqrt(2.0)
        rate = np.sqrt(2.0) * self.rotor_arm_ratio
        offset = (s - rate * self.L_max) * along + t * side + np.array([0.0, 0.0, z])
        return geo.MountRule(tuple(offset), tuple(rate * along)).rotated(host * np.pi / 2.0)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for k, v in d.items():
            if k not in known:
                raise InvalidConfigError(f"unknown layout parameter {k!r}")
            kwargs[k] = tuple(float(x) for x in v) if isinstance(v, (list, tuple)) else float(v)
        return cls(**kwargs)


@dataclass
class CalibrationReport:
    layout: RingLayout
    geometry: geo.MorphGeometry
    residuals: dict
    achieved: dict
    targets: CalibrationTargets
    cost: float
    nfev: int

    def table(self):
        lines = [f"{'target':<16}{'achieved':>14}{'target':>14}{'residual':>14}"]
        for key, res in self.residuals.items():
            lines.append(f"{key:<16}{self.achieved[key]:>14.6g}{self._target(key):>14.6g}{res:>14.3e}")
        return "\n".join(lines)

    def _target(self, key):
        name, axis = key.rsplit("_", 1)
        vec = {"J_large": self.targets.inertia_large, "J_small": self.targets.inertia_small,
               "cog": self.targets.cog_large}[name]
        return float(vec["xyz".index(axis)])

    def key_values(self):
        out = {f"residual.{k}": v for k, v in self.residuals.items()}
        out.update({f"achieved.{k}": v for k, v in self.achieved.items()})
        out.update({f"layout.{k}": v for k, v in self.layout.to_dict().items()})
        out["mass"] = self.geometry.total_mass
        return out


def _evaluate(layout: RingLayout, targets: CalibrationTargets):
    g = layout.build()
    big = geo.total_inertia(g, targets.L_large)
    small = geo.total_inertia(g, targets.L_small)
    achieved = {}
    residuals = {}
    for label, props, want in (("J_large", big, targets.inertia_large), ("J_small", small, targets.inertia_small)):
        for i, axis in enumerate("xyz"):
            achieved[f"{label}_{axis}"] = float(props.inertia[i, i])
            residuals[f"{label}_{axis}"] = float((props.inertia[i, i] - want[i]) / want[i])
    for i, axis in enumerate("xyz"):
        achieved[f"cog_{axis}"] = float(big.cog[i])
        residuals[f"cog_{axis}"] = float(big.cog[i] - targets.cog_large[i])
    return g, achieved, residuals


def calibrate_layout(
    targets: Optional[CalibrationTargets] = None,
    initial: Optional[RingLayout] = None,
    inertia_rtol: float = 0.05,
    cog_tol: float = 1e-3,
    max_nfev: int = 1000,
) -> CalibrationReport:
    """Fit the free layout parameters to ``targets``.

    Inertia residuals are relative; COG residuals are in meters (reported
    as-is, weighted by 1/0.05 m in the fit).  Raises ``CalibrationError``
    when the best fit still misses a tolerance.
    """
    targets = targets or CalibrationTargets()
    targets.check()
    base = dataclasses.replace(initial or RingLayout(), total_mass=targets.mass)
    lo = np.array([v[1] for v in FREE_PARAMETERS.values()])
    hi = np.array([v[2] for v in FREE_PARAMETERS.values()])
    x0 = np.clip(base.free_vector(), lo, hi)
    cog_weight = 1.0 / 0.05

    def fun(x):
        try:
            _, _, res = _evaluate(base.with_free_vector(x), targets)
        except (InvalidConfigError, ValueError):
            return np.full(9, 1e3)
        r = np.array(list(res.values()))
        r[6:] *= cog_weight
        return r

    sol = least_squares(fun, x0, bounds=(lo, hi), x_scale=hi - lo, ftol=1e-12, xtol=1e-12, gtol=1e-12, max_nfev=max_nfev)
    layout = base.with_free_vector(sol.x)
    g, achieved, residuals = _evaluate(layout, targets)
    report = CalibrationReport(layout, g, residuals, achieved, targets, float(sol.cost), int(sol.nfev))
    bad = {k: v for k, v in residuals.items()
           if (k.startswith("J") and abs(v) > inertia_rtol) or (k.startswith("cog") and abs(v) > cog_tol)}
    if bad:
        raise CalibrationError("layout fit misses its targets:\n" + report.table(), residuals)
    return report
