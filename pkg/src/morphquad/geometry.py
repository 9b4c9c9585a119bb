"""Mass properties and control allocation of the morphing airframe.

Every component is mounted at a body-frame position that is an affine
function of the side length ``L``.  Center of gravity, inertia about the
COG and the thrust allocation matrix are re-evaluated exactly for each
``L`` (no tables), so the controller sees a continuous model.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, InvalidConfigError, InvalidGeometryError
from .quaternion import skew

CYLINDER = "motor-cylinder"
CUBOID = "cuboid"
MODULE = "module-composite"
KINDS = (CYLINDER, CUBOID, MODULE)

L_MIN = 0.284
L_MAX = 0.414
K_THRUST = 7.19544e-9
K_TORQUE = 1.07932e-10
SPIN_SIGNS = (1, -1, 1, -1)

_L_TOL = 1e-12


def _vec3(v, name):
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != (3,) or not np.all(np.isfinite(a)):
        raise InvalidConfigError(f"{name} must be a finite 3-vector, got {v!r}")
    return a


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def rot_z(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def parallel_axis(mass, offset):
    """Inertia added by a point mass at ``offset``: ``-m [r]x^2``."""
    r = np.asarray(offset, dtype=float)
    s = skew(r)
    return -mass * (s @ s)


@dataclass(frozen=True)
class MountRule:
    """Body-frame position ``offset + slope * L``."""

    offset: tuple = (0.0, 0.0, 0.0)
    slope: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "offset", tuple(_vec3(self.offset, "mount offset")))
        object.__setattr__(self, "slope", tuple(_vec3(self.slope, "mount slope")))

    def at(self, L):
        return np.asarray(self.offset) + np.asarray(self.slope) * L

    def rotated(self, theta):
        r = rot_z(theta)
        return MountRule(tuple(r @ np.asarray(self.offset)), tuple(r @ np.asarray(self.slope)))


@dataclass(frozen=True)
class Cutout:
    """Cuboid removed from a module's completed bounding cuboid.

    ``offset`` is the cutout center relative to the bounding-cuboid center,
    in the module's own frame.
    """

    size: tuple
    offset: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        size = _vec3(self.size, "cutout size")
        if np.any(size <= 0):
            raise InvalidGeometryError(f"cutout dimensions must be positive, got {tuple(size)}")
        object.__setattr__(self, "size", tuple(size))
        object.__setattr__(self, "offset", tuple(_vec3(self.offset, "cutout offset")))

    @property
    def volume(self):
        return float(np.prod(self.size))


@dataclass(frozen=True)
class ComponentSpec:
    """One rigid part of the airframe.

    ``size`` is ``(radius, height)`` for a motor cylinder and
    ``(l, w, h)`` along the part's local x, y, z for cuboids and for the
    completed bounding cuboid of a module.  The mount rule places the
    cylinder/cuboid center (module: bounding-cuboid center); ``yaw``
    rotates the part's local frame about body z.
    """

    name: str
    kind: str
    mass: float
    size: tuple
    mount: MountRule = field(default_factory=MountRule)
    yaw: float = 0.0
    cutouts: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidConfigError(f"{self.name}: unknown component kind {self.kind!r}")
        if not (np.isfinite(self.mass) and self.mass > 0):
            raise InvalidGeometryError(f"{self.name}: mass must be positive, got {self.mass}")
        size = tuple(float(s) for s in self.size)
        expected = 2 if self.kind == CYLINDER else 3
        if len(size) != expected:
            raise InvalidConfigError(f"{self.name}: {self.kind} needs {expected} dimensions, got {size}")
        if not all(np.isfinite(s) and s > 0 for s in size):
            raise InvalidGeometryError(f"{self.name}: dimensions must be positive, got {size}")
        object.__setattr__(self, "size", size)
        cutouts = tuple(self.cutouts)
        if cutouts and self.kind != MODULE:
            raise InvalidConfigError(f"{self.name}: only module components take cutouts")
        object.__setattr__(self, "cutouts", cutouts)
        if self.kind == MODULE:
            _check_cutouts(self.name, size, cutouts)

    def local_cog(self):
        """COG offset from the mount point, in the part's own frame."""
        if self.kind != MODULE or not self.cutouts:
            return np.zeros(3)
        rho = _module_density(self)
        moment = -sum(rho * c.volume * np.asarray(c.offset) for c in self.cutouts)
        return moment / self.mass

    def cog_at(self, L):
        return self.mount.at(L) + rot_z(self.yaw) @ self.local_cog()


def _check_cutouts(name, size, cutouts):
    half = np.asarray(size) / 2.0
    for c in cutouts:
        lo = np.asarray(c.offset) - np.asarray(c.size) / 2.0
        hi = np.asarray(c.offset) + np.asarray(c.size) / 2.0
        if np.any(lo < -half - 1e-12) or np.any(hi > half + 1e-12):
            raise InvalidGeometryError(f"{name}: cutout {c} extends outside the bounding cuboid")
    for i, a in enumerate(cutouts):
        for b in cutouts[i + 1:]:
            gap = np.abs(np.asarray(a.offset) - np.asarray(b.offset)) - (np.asarray(a.size) + np.asarray(b.size)) / 2.0
            if np.all(gap < -1e-12):
                raise InvalidGeometryError(f"{name}: cutouts {a} and {b} overlap")
    removed = sum(c.volume for c in cutouts)
    if removed >= np.prod(size) * (1.0 - 1e-9):
        raise InvalidGeometryError(f"{name}: cutouts remove the whole module")


def _module_density(spec):
    net = np.prod(spec.size) - sum(c.volume for c in spec.cutouts)
    return spec.mass / net


def cuboid_inertia(mass, l, w, h):
    return mass / 12.0 * np.diag([w * w + h * h, h * h + l * l, w * w + l * l])


def cylinder_inertia(mass, r, h):
    return mass / 12.0 * np.diag([3 * r * r + h * h, 3 * r * r + h * h, 6 * r * r])


def primitive_inertia(spec: ComponentSpec):
    """Diagonal inertia of a cylinder or cuboid about its own COG."""
    if spec.kind == CYLINDER:
        return cylinder_inertia(spec.mass, *spec.size)
    if spec.kind == CUBOID:
        return cuboid_inertia(spec.mass, *spec.size)
    raise InvalidConfigError(f"{spec.name}: module components need module_inertia()")


def module_inertia(spec: ComponentSpec):
    """Inertia of a module about its own COG, in the module frame.

    The completed bounding cuboid is shifted to the module COG, then each
    cutout's inertia, shifted to the same point, is removed.  All bodies
    share one uniform density fixed by the module mass.
    """
    if spec.kind != MODULE:
        raise InvalidConfigError(f"{spec.name}: module_inertia() needs a module component")
    rho = _module_density(spec)
    m_full = rho * np.prod(spec.size)
    c = spec.local_cog()
    j = cuboid_inertia(m_full, *spec.size) + parallel_axis(m_full, -c)
    for cut in spec.cutouts:
        m_cut = rho * cut.volume
        j -= cuboid_inertia(m_cut, *cut.size) + parallel_axis(m_cut, np.asarray(cut.offset) - c)
    j = 0.5 * (j + j.T)
    moments = np.linalg.eigvalsh(j)
    if moments[0] <= 0.0:
        raise InvalidGeometryError(f"{spec.name}: cutouts leave a non-positive principal moment {moments[0]:.3e}")
    return j


def component_inertia(spec: ComponentSpec):
    """Inertia about the component COG, expressed in body axes."""
    j = module_inertia(spec) if spec.kind == MODULE else primitive_inertia(spec)
    if spec.yaw:
        r = rot_z(spec.yaw)
        j = r @ j @ r.T
    return j


def _triangle_ok(moments, rtol=1e-9):
    a, b, c = np.sort(moments)
    return a + b >= c * (1.0 - rtol) - 1e-15


@dataclass(frozen=True)
class Payload:
    """Grasped object: inertia about its own COG, attached at ``position``."""

    mass: float = 0.0
    inertia: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    position: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (np.isfinite(self.mass) and self.mass >= 0):
            raise DomainError(f"payload mass must be non-negative, got {self.mass}")
        j = np.asarray(self.inertia, dtype=float)
        if j.shape != (3, 3) or not np.all(np.isfinite(j)):
            raise DomainError("payload inertia must be a finite 3x3 matrix")
        if not np.allclose(j, j.T, atol=1e-12):
            raise DomainError("payload inertia must be symmetric")
        scale = max(1.0, float(np.max(np.abs(j))))
        moments = np.linalg.eigvalsh(j)
        if moments[0] < -1e-12 * scale:
            raise DomainError("payload inertia must be positive semi-definite")
        if not _triangle_ok(moments):
            raise DomainError("payload principal moments violate the triangle inequality")
        object.__setattr__(self, "inertia", _frozen(j))
        object.__setattr__(self, "position", tuple(_vec3(self.position, "payload position")))

    @classmethod
    def cuboid(cls, mass, l, w, h, position=(0.0, 0.0, 0.0)):
        return cls(mass, cuboid_inertia(mass, l, w, h), position)


NO_PAYLOAD = Payload()


@dataclass(frozen=True)
class MorphGeometry:
    """Component layout parameterized by the side length ``L``.

    Rotor ``j`` sits at ``rotor_mounts[j].at(L)``; rotors are ordered
    around the ring and spin with alternating ``spin_signs``.
    """

    components: tuple
    rotor_mounts: tuple
    spin_signs: tuple = SPIN_SIGNS
    L_min: float = L_MIN
    L_max: float = L_MAX
    k_t: float = K_THRUST
    k_c: float = K_TORQUE

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "rotor_mounts", tuple(self.rotor_mounts))
        object.__setattr__(self, "spin_signs", tuple(int(s) for s in self.spin_signs))
        if not self.components:
            raise InvalidConfigError("geometry has no components")
        if not 0 < self.L_min < self.L_max:
            raise InvalidConfigError(f"need 0 < L_min < L_max, got {self.L_min}, {self.L_max}")
        if len(self.rotor_mounts) != 4 or len(self.spin_signs) != 4:
            raise InvalidConfigError("exactly four rotors are required")
        if any(self.spin_signs[i] != -self.spin_signs[i - 1] or abs(self.spin_signs[i]) != 1 for i in range(4)):
            raise InvalidConfigError(f"spin signs must alternate around the ring, got {self.spin_signs}")
        if self.k_t <= 0 or self.k_c <= 0:
            raise InvalidConfigError("thrust and torque coefficients must be positive")
        for L in (self.L_min, 0.5 * (self.L_min + self.L_max), self.L_max):
            if not _is_square(self.rotor_positions(L)):
                raise InvalidGeometryError(f"rotor positions at L={L} do not form a square")
        for name, rule, point in self._mounted_points():
            for L in (self.L_min, self.L_max):
                # |r(L)| must not grow as L shrinks
                if float(point(L) @ np.asarray(rule.slope)) < -1e-12:
                    raise InvalidGeometryError(f"{name}: mount moves away from the center while shrinking")

    def _mounted_points(self):
        for c in self.components:
            yield c.name, c.mount, c.cog_at
        for j, rule in enumerate(self.rotor_mounts):
            yield f"rotor{j + 1}", rule, rule.at

    @property
    def total_mass(self):
        return float(sum(c.mass for c in self.components))

    def check_size(self, L):
        if not np.isfinite(L) or L < self.L_min - _L_TOL or L > self.L_max + _L_TOL:
            raise DomainError(f"side length {L} outside [{self.L_min}, {self.L_max}]")

    def rotor_positions(self, L):
        return np.array([rule.at(L) for rule in self.rotor_mounts])


def _is_square(points, rtol=1e-9):
    pts = np.asarray(points)[:, :2]
    center = pts.mean(axis=0)
    rel = pts - center
    radii = np.linalg.norm(rel, axis=1)
    if radii.min() <= 0:
        return False
    if np.ptp(radii) > rtol * radii.max():
        return False
    side = np.linalg.norm(pts - np.roll(pts, -1, axis=0), axis=1)
    return np.ptp(side) <= rtol * side.max() and abs(np.linalg.norm(pts[0] - pts[2]) - 2 * radii[0]) <= rtol * radii[0]


def center_of_gravity(geom: MorphGeometry, L: float, payload: Optional[Payload] = None):
    """Mass-weighted mean of the component COGs (and payload) at size ``L``."""
    geom.check_size(L)
    payload = payload or NO_PAYLOAD
    total = geom.total_mass + payload.mass
    if not total > 0:
        raise InvalidConfigError("total mass is zero")
    moment = sum(c.mass * c.cog_at(L) for c in geom.components)
    moment = moment + payload.mass * np.asarray(payload.position)
    return moment / total


def inertia_about(geom: MorphGeometry, L: float, point, payload: Optional[Payload] = None):
    """Whole-vehicle inertia about an arbitrary body-frame ``point``."""
    geom.check_size(L)
    payload = payload or NO_PAYLOAD
    p = _vec3(point, "reference point")
    j = np.zeros((3, 3))
    for c in geom.components:
        j += component_inertia(c) + parallel_axis(c.mass, c.cog_at(L) - p)
    if payload.mass > 0 or np.any(payload.inertia):
        j += payload.inertia + parallel_axis(payload.mass, np.asarray(payload.position) - p)
    return 0.5 * (j + j.T)


def allocation_matrix(cog, rotor_positions, spin_signs=SPIN_SIGNS, k_t=K_THRUST, k_c=K_TORQUE):
    """Map rotor thrusts to ``(T, tau_x, tau_y, tau_z)`` about the COG.

    Roll and pitch rows are the lever arms of each rotor about the COG:
    ``l_yj - r_y`` and ``r_x - l_xj``.  The yaw row is the rotor drag
    ratio ``k_c / k_t`` with the rotor's spin sign.
    """
    r = _vec3(cog, "cog")
    pos = np.asarray(rotor_positions, dtype=float)
    if pos.shape != (4, 3):
        raise InvalidConfigError("allocation needs four rotor positions")
    signs = np.asarray(spin_signs, dtype=float)
    return np.vstack(
        [
            np.ones(4),
            pos[:, 1] - r[1],
            r[0] - pos[:, 0],
            signs * (k_c / k_t),
        ]
    )


@dataclass(frozen=True, eq=False)
class VehicleProperties:
    """Mass properties and allocation at one instant.

    ``inertia`` is about the COG in body axes; ``allocation`` maps the four
    rotor thrusts to collective thrust and body torques.
    """

    mass: float
    cog: np.ndarray
    inertia: np.ndarray
    allocation: np.ndarray
    k_t: float = K_THRUST
    k_c: float = K_TORQUE
    L: float = float("nan")
    rotor_positions: Optional[np.ndarray] = None

    def __post_init__(self):
        if not (np.isfinite(self.mass) and self.mass > 0):
            raise InvalidConfigError(f"mass must be positive, got {self.mass}")
        j = np.asarray(self.inertia, dtype=float)
        if j.shape != (3, 3) or not np.all(np.isfinite(j)):
            raise InvalidConfigError("inertia must be a finite 3x3 matrix")
        if np.max(np.abs(j - j.T)) > 1e-12 * max(1.0, np.max(np.abs(j))):
            raise InvalidConfigError("inertia must be symmetric")
        moments = np.linalg.eigvalsh(j)
        if moments[0] <= 0:
            raise InvalidConfigError("inertia must be positive definite")
        if not _triangle_ok(moments):
            raise InvalidConfigError("principal moments violate the triangle inequality")
        h = np.asarray(self.allocation, dtype=float)
        if h.shape != (4, 4) or not np.all(h[0] == 1.0):
            raise InvalidConfigError("allocation must be 4x4 with a row of ones on top")
        object.__setattr__(self, "mass", float(self.mass))
        object.__setattr__(self, "cog", _frozen(_vec3(self.cog, "cog")))
        object.__setattr__(self, "inertia", _frozen(j))
        object.__setattr__(self, "allocation", _frozen(h))
        if self.rotor_positions is not None:
            object.__setattr__(self, "rotor_positions", _frozen(self.rotor_positions))
        object.__setattr__(self, "inertia_inv", _frozen(np.linalg.inv(j)))
        try:
            h_inv = np.linalg.inv(h)
        except np.linalg.LinAlgError:
            h_inv = np.full((4, 4), np.nan)
        object.__setattr__(self, "allocation_inv", _frozen(h_inv))

    def hover_thrusts(self, gravity=9.81):
        """Rotor thrusts producing pure collective thrust ``m g``."""
        return self.allocation_inv @ np.array([self.mass * gravity, 0.0, 0.0, 0.0])

    def thrusts_for_wrench(self, wrench):
        return self.allocation_inv @ np.asarray(wrench, dtype=float)

    def replace(self, **changes):
        fields = dict(
            mass=self.mass, cog=self.cog, inertia=self.inertia, allocation=self.allocation,
            k_t=self.k_t, k_c=self.k_c, L=self.L, rotor_positions=self.rotor_positions,
        )
        fields.update(changes)
        return VehicleProperties(**fields)


def total_inertia(geom: MorphGeometry, L: float, payload: Optional[Payload] = None) -> VehicleProperties:
    """Full vehicle properties at side length ``L`` with an optional payload."""
    payload = payload or NO_PAYLOAD
    cog = center_of_gravity(geom, L, payload)
    j = inertia_about(geom, L, cog, payload)
    rotors = geom.rotor_positions(L)
    h = allocation_matrix(cog, rotors, geom.spin_signs, geom.k_t, geom.k_c)
    return VehicleProperties(
        mass=geom.total_mass + payload.mass,
        cog=cog,
        inertia=j,
        allocation=h,
        k_t=geom.k_t,
        k_c=geom.k_c,
        L=float(L),
        rotor_positions=rotors,
    )


vehicle_properties = total_inertia


def symmetric_quad_properties(mass=1.665, side=L_MAX, inertia=(0.0380, 0.0459, 0.0823), k_t=K_THRUST, k_c=K_TORQUE):
    """Properties of an ideal square quadrotor with centered COG.

    Rotors sit at the corners of a ``side`` x ``side`` square, ordered
    counter-clockwise starting at (+x, +y).
    """
    half = side / 2.0
    rotors = np.array([[half, half, 0.0], [-half, half, 0.0], [-half, -half, 0.0], [half, -half, 0.0]])
    h = allocation_matrix(np.zeros(3), rotors, SPIN_SIGNS, k_t, k_c)
    return VehicleProperties(mass, np.zeros(3), np.diag(inertia), h, k_t, k_c, side, rotors)


def square_rotor_mounts(arm_ratio=0.5, z=0.0):
    """Rotor mounts at ``(±arm_ratio L, ±arm_ratio L, z)``, counter-clockwise."""
    corners = [(1, 1), (-1, 1), (-1, -1), (1, -1)]
    return tuple(MountRule((0.0, 0.0, z), (sx * arm_ratio, sy * arm_ratio, 0.0)) for sx, sy in corners)


def principal_moments(j: Sequence) -> np.ndarray:
    return np.linalg.eigvalsh(np.asarray(j, dtype=float))
