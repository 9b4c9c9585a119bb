"""Closed-loop scenarios: servo, property refresh, controller, physics.

One control tick (default 100 Hz) computes a thrust command from the
current state and the vehicle properties at the current size and
payload.  The command and properties are then held while the physics
(default 1 kHz) and the size servo advance to the next tick.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import config as cfgmod
from . import geometry as geo
from . import quaternion as quat
from .baselines import LqrConfig, LqrController, PidGains, pid_control
from .calibration import RingLayout
from .dynamics import TRAJECTORY_COLUMNS, ExternalWrench, RigidBodyModel, write_trajectory_csv
from .errors import ControllerError, DomainError, IntegrationDivergedError, InvalidConfigError, SolverError
from .nmpc import NmpcConfig, ReferenceWindow, solve
from .reference import Figure8, Hover, ReferenceSample, Waypoints
from .servo import ServoParams, servo_command, servo_step

CONTROLLERS = ("pid", "lqr", "nmpc")
COL = {name: i for i, name in enumerate(TRAJECTORY_COLUMNS)}


@dataclass(frozen=True)
class PayloadEvent:
    attach: float
    payload: geo.Payload
    detach: Optional[float] = None


@dataclass(frozen=True)
class Disturbance:
    """Constant plus band-limited random force (world) and torque (body).

    The random part is first-order filtered Gaussian noise with standard
    deviation ``*_std`` and corner frequency ``bandwidth`` [Hz].
    """

    force: tuple = (0.0, 0.0, 0.0)
    torque: tuple = (0.0, 0.0, 0.0)
    force_std: float = 0.0
    torque_std: float = 0.0
    bandwidth: float = 2.0
    drag: float = 0.0

    def __post_init__(self):
        if self.force_std < 0 or self.torque_std < 0 or not self.bandwidth > 0:
            raise InvalidConfigError("disturbance spreads must be non-negative and bandwidth positive")


@dataclass(frozen=True)
class GapSpec:
    """Opening of ``width`` (square for ``hole``) centred at ``center``.

    ``slot``: a vertical slot crossed along x, only the y extent matters.
    ``hole``: a horizontal square frame crossed along z, both planform
    extents matter.
    """

    kind: str = "slot"
    center: tuple = (0.0, 0.0, 1.0)
    width: float = 0.40
    margin: float = 0.05
    depth: float = 0.05
    vehicle_height: float = 0.06

    def __post_init__(self):
        if self.kind not in ("slot", "hole"):
            raise InvalidConfigError(f"unknown gap kind {self.kind!r}")
        if not 0 <= self.margin < self.width:
            raise InvalidConfigError("gap margin must be in [0, width)")

    @property
    def axes(self):
        return (0, (1,)) if self.kind == "slot" else (2, (0, 1))


@dataclass(frozen=True)
class Scenario:
    name: str
    duration: float
    reference: Callable[[float], ReferenceSample]
    controller: str = "nmpc"
    morph: tuple = ()  # ((t, L_ref), ...): piecewise-constant size reference
    initial_L: float = geo.L_MAX
    payloads: tuple = ()
    disturbance: Disturbance = Disturbance()
    start: str = "reference"  # "reference": on the reference; "rest": level and still at its position
    initial_state: Optional[tuple] = None  # overrides ``start``
    control_hz: float = 100.0
    physics_hz: float = 1000.0
    gap: Optional[GapSpec] = None
    layout: Optional[RingLayout] = None  # None: shipped calibrated layout
    servo: ServoParams = ServoParams()
    nmpc: NmpcConfig = NmpcConfig()
    pid: PidGains = PidGains()
    lqr: LqrConfig = LqrConfig()

    def __post_init__(self):
        if not self.duration > 0:
            raise InvalidConfigError("duration must be positive")
        if self.start not in ("reference", "rest"):
            raise InvalidConfigError(f"start must be 'reference' or 'rest', got {self.start!r}")
        if self.controller not in CONTROLLERS:
            raise InvalidConfigError(f"controller must be one of {CONTROLLERS}, got {self.controller!r}")
        ratio = self.physics_hz / self.control_hz
        if not (self.control_hz > 0 and ratio >= 1 and abs(ratio - round(ratio)) < 1e-9):
            raise InvalidConfigError("physics rate must be a positive integer multiple of the control rate")
        times = [t for t, _ in self.morph]
        if any(not 0 <= t <= self.duration for t in times) or times != sorted(times):
            raise InvalidConfigError("morph schedule times must be sorted and within the duration")
        for ev in self.payloads:
            if not 0 <= ev.attach <= self.duration:
                raise InvalidConfigError("payload attach time outside the scenario")
            if ev.detach is not None and not ev.attach < ev.detach <= self.duration:
                raise InvalidConfigError("payload detach must follow attach within the scenario")
        if not self.servo.L_min <= self.initial_L <= self.servo.L_max:
            raise InvalidConfigError("initial size outside the servo bounds")

    def initial(self):
        if self.initial_state is not None:
            x = np.array(self.initial_state, dtype=float)
            if x.shape != (13,) or abs(np.linalg.norm(x[6:10]) - 1.0) > 1e-9:
                raise InvalidConfigError("initial_state needs 13 values with a unit quaternion")
            return x
        r = self.reference(0.0)
        if self.start == "reference":
            return r.state_array()
        yaw = quat.from_axis_angle((0.0, 0.0, 1.0), r.yaw)
        return np.concatenate([r.position, np.zeros(3), yaw, np.zeros(3)])

    def L_ref(self, t):
        ref = self.initial_L
        for tk, L in self.morph:
            if t >= tk:
                ref = L
        return ref

    def payload(self, t):
        """Combined payload attached at time ``t`` (``None`` if nothing)."""
        active = [ev.payload for ev in self.payloads
                  if ev.attach <= t and (ev.detach is None or t < ev.detach)]
        if not active:
            return None
        if len(active) == 1:
            return active[0]
        m = sum(p.mass for p in active)
        c = sum(p.mass * np.asarray(p.position) for p in active) / m
        j = sum(p.inertia + geo.parallel_axis(p.mass, np.asarray(p.position) - c) for p in active)
        return geo.Payload(m, j, c)

    def with_(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Metrics:
    rmse: float
    max_error: float
    rmse_axis: tuple
    max_axis: tuple
    saturation_duty: float
    upper_hits: int
    bound_violations: int
    samples: int
    max_thrust: float
    solve_time_mean: float = 0.0
    solve_time_max: float = 0.0

    def as_dict(self):
        return dataclasses.asdict(self)


class _MetricAccumulator:
    def __init__(self, u_min, u_max):
        self.u_min, self.u_max = u_min, u_max
        self.sq = np.zeros(3)
        self.max_axis = np.zeros(3)
        self.max_norm = 0.0
        self.n = 0
        self.saturated = 0
        self.upper = 0
        self.violations = 0
        self.max_thrust = -np.inf
        self.times = []

    def add(self, err, u, solve_time=None):
        self.sq += err * err
        self.max_axis = np.maximum(self.max_axis, np.abs(err))
        self.max_norm = max(self.max_norm, float(np.sqrt(err @ err)))
        self.n += 1
        self.saturated += bool(np.any(u <= self.u_min) or np.any(u >= self.u_max))
        self.upper += bool(np.any(u == self.u_max))
        self.violations += int(np.sum((u < self.u_min) | (u > self.u_max)))
        self.max_thrust = max(self.max_thrust, float(np.max(u)))
        if solve_time is not None:
            self.times.append(solve_time)

    def result(self):
        n = max(self.n, 1)
        times = np.array(self.times) if self.times else np.zeros(1)
        return Metrics(
            rmse=float(np.sqrt(self.sq.sum() / n)),
            max_error=self.max_norm,
            rmse_axis=tuple(float(v) for v in np.sqrt(self.sq / n)),
            max_axis=tuple(float(v) for v in self.max_axis),
            saturation_duty=self.saturated / n,
            upper_hits=self.upper,
            bound_violations=self.violations,
            samples=self.n,
            max_thrust=self.max_thrust,
            solve_time_mean=float(times.mean()),
            solve_time_max=float(times.max()),
        )


def metrics_from_log(log, scenario: Scenario, u_min=None, u_max=None) -> Metrics:
    """Recompute tracking and saturation metrics from a trajectory log."""
    u_min = scenario.nmpc.u_min if u_min is None else u_min
    u_max = scenario.nmpc.u_max if u_max is None else u_max
    log = np.asarray(log, dtype=float)
    if log.shape[0] == 0:
        return _MetricAccumulator(u_min, u_max).result()
    ref = np.array([scenario.reference(t).position for t in log[:, COL["t"]]])
    err = log[:, COL["px"]:COL["pz"] + 1] - ref
    u = log[:, COL["t1"]:COL["t4"] + 1]
    norms = np.linalg.norm(err, axis=1)
    return Metrics(
        rmse=float(np.sqrt(np.mean(np.sum(err**2, axis=1)))),
        max_error=float(norms.max()),
        rmse_axis=tuple(float(v) for v in np.sqrt(np.mean(err**2, axis=0))),
        max_axis=tuple(float(v) for v in np.abs(err).max(axis=0)),
        saturation_duty=float(np.mean(np.any((u <= u_min) | (u >= u_max), axis=1))),
        upper_hits=int(np.sum(np.any(u == u_max, axis=1))),
        bound_violations=int(np.sum((u < u_min) | (u > u_max))),
        samples=int(log.shape[0]),
        max_thrust=float(u.max()),
    )


@dataclass(frozen=True)
class GapResult:
    success: bool
    crossed: bool
    max_width: float
    min_clearance: float
    window: tuple  # (first, last) time inside the opening


def evaluate_gap(log, gap: GapSpec) -> GapResult:
    """Check the footprint against the opening while the body is inside it."""
    log = np.asarray(log, dtype=float)
    normal, lateral = gap.axes
    c = np.asarray(gap.center, dtype=float)
    pos = log[:, COL["px"]:COL["pz"] + 1]
    L = log[:, COL["L"]]
    half_extent = 0.5 * L if gap.kind == "slot" else np.full_like(L, 0.5 * gap.vehicle_height)
    inside = np.abs(pos[:, normal] - c[normal]) <= 0.5 * gap.depth + half_extent
    if not inside.any():
        return GapResult(False, False, float("nan"), float("nan"), (float("nan"), float("nan")))
    half_open = 0.5 * (gap.width - gap.margin)
    clearance = np.min(
        [half_open - (np.abs(pos[inside, a] - c[a]) + 0.5 * L[inside]) for a in lateral], axis=0
    )
    t = log[inside, COL["t"]]
    return GapResult(bool(np.all(clearance >= 0.0)), True, float(L[inside].max()),
                     float(clearance.min()), (float(t[0]), float(t[-1])))


class NmpcTracker:
    """Receding-horizon wrapper: builds the window and warm-starts each tick."""

    def __init__(self, cfg: NmpcConfig, tick):
        self.cfg = cfg
        self.tick = tick
        self.last = None

    def __call__(self, t, x, reference, props):
        cfg = self.cfg
        samples = [reference(t + i * cfg.dt) for i in range(cfg.horizon + 1)]
        states = np.array([s.state_array() for s in samples])
        u_ref = np.array([
            props.thrusts_for_wrench((s.collective_thrust(props.mass, cfg.gravity), 0.0, 0.0, 0.0))
            for s in samples[:-1]
        ])
        shift = self.tick / cfg.dt if self.last is not None else 0.0
        sol = solve(x, ReferenceWindow(states, u_ref), props, cfg, warm_start=self.last, shift=shift)
        self.last = sol
        info = {
            "iterations": sol.iterations, "kkt": sol.kkt, "solve_time": sol.solve_time,
            "active_lower": int(sol.active_lower.sum()), "active_upper": int(sol.active_upper.sum()),
        }
        return sol.u0, info


def make_controller(sc: Scenario):
    tick = 1.0 / sc.control_hz
    if sc.controller == "nmpc":
        return NmpcTracker(sc.nmpc, tick)
    if sc.controller == "lqr":
        lqr = LqrController(dataclasses.replace(sc.lqr, dt=tick))

        def run_lqr(t, x, reference, props):
            t0 = time.perf_counter()
            u = lqr(x, reference(t), props)
            return u, {"solve_time": time.perf_counter() - t0}
        return run_lqr
    gains = dataclasses.replace(sc.pid, tick=tick)

    def run_pid(t, x, reference, props):
        t0 = time.perf_counter()
        u = pid_control(x, reference(t), props, gains)
        return u, {"solve_time": time.perf_counter() - t0}
    return run_pid


@dataclass
class ScenarioResult:
    scenario: Scenario
    seed: int
    log: np.ndarray
    metrics: Metrics
    diagnostics: list = field(default_factory=list)
    error: Optional[str] = None
    gap: Optional[GapResult] = None

    @property
    def ok(self):
        return self.error is None

    def __iter__(self):
        return iter((self.log, self.metrics))

    def summary(self):
        out = {"scenario": self.scenario.name, "controller": self.scenario.controller, "seed": self.seed,
               "ok": self.ok, "error": self.error, **self.metrics.as_dict()}
        if self.gap is not None:
            out["gap"] = dataclasses.asdict(self.gap)
        return out

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{self.scenario.name}_{self.scenario.controller}"
        write_trajectory_csv(out / f"{stem}_trajectory.csv", self.log, self.scenario.controller)
        with open(out / f"{stem}_diagnostics.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            keys = ["t", "iterations", "kkt", "solve_time", "active_lower", "active_upper"]
            writer.writerow(keys + ["controller"])
            for d in self.diagnostics:
                writer.writerow([d.get(k, "") for k in keys] + [self.scenario.controller])
        summary = self.summary()
        with open(out / f"{stem}_metrics.txt", "w") as fh:
            for k, v in summary.items():
                fh.write(f"{k} = {v}\n")
        with open(out / f"{stem}_summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, default=float)
        return out / f"{stem}_trajectory.csv"


_DEFAULT_GEOMETRY = {}


def default_layout() -> RingLayout:
    return cfgmod.layout_from_config(cfgmod.load_config())


def _geometry(layout: Optional[RingLayout]):
    key = layout
    if key not in _DEFAULT_GEOMETRY:
        _DEFAULT_GEOMETRY[key] = (layout or default_layout()).build()
    return _DEFAULT_GEOMETRY[key]


def run_scenario(sc: Scenario, seed: int = 0) -> ScenarioResult:
    """Simulate ``sc``; failures end the run and are recorded in ``error``."""
    geom = _geometry(sc.layout)
    tick = 1.0 / sc.control_hz
    ratio = int(round(sc.physics_hz / sc.control_hz))
    h = tick / ratio
    n_ticks = int(round(sc.duration * sc.control_hz))
    rng = np.random.default_rng(seed)
    dist = sc.disturbance
    decay = np.exp(-2.0 * np.pi * dist.bandwidth * tick)
    noise_f = np.zeros(3)
    noise_t = np.zeros(3)
    controller = make_controller(sc)
    u_min, u_max = sc.nmpc.u_min, sc.nmpc.u_max
    acc = _MetricAccumulator(u_min, u_max)
    x = sc.initial()
    L = float(sc.initial_L)
    rows, diagnostics = [], []
    error = None
    for k in range(n_ticks):
        t = k / sc.control_hz
        try:
            props = geo.total_inertia(geom, L, sc.payload(t))
            u, info = controller(t, x, sc.reference, props)
            u = np.asarray(u, dtype=float)
            if not np.all(np.isfinite(u)):
                raise ControllerError(f"non-finite thrust command at t = {t:.3f}")
        except (ControllerError, SolverError, DomainError, np.linalg.LinAlgError) as exc:
            error = f"{type(exc).__name__} at t = {t:.3f}: {exc}"
            break
        ref = sc.reference(t)
        acc.add(x[0:3] - ref.position, u, info.get("solve_time"))
        rows.append(np.concatenate([[t], x, u, [L]]))
        diagnostics.append({"t": t, **info})
        if dist.force_std > 0 or dist.torque_std > 0:
            gain = np.sqrt(1.0 - decay**2)
            noise_f = decay * noise_f + gain * dist.force_std * rng.standard_normal(3)
            noise_t = decay * noise_t + gain * dist.torque_std * rng.standard_normal(3)
        wrench = ExternalWrench(np.asarray(dist.force) + noise_f, np.asarray(dist.torque) + noise_t, dist.drag)
        body = RigidBodyModel(props, wrench, sc.nmpc.gravity)
        L_ref = sc.L_ref(t)
        for _ in range(ratio):
            L = servo_step(L, servo_command(L_ref, L, sc.servo).rate, h, sc.servo)
            x = body.step(x, u, h)
        if not np.all(np.isfinite(x)):
            error = f"{IntegrationDivergedError.__name__} at t = {t:.3f}: non-finite state"
            break
    log = np.array(rows).reshape(-1, len(TRAJECTORY_COLUMNS))
    gap = evaluate_gap(log, sc.gap) if sc.gap is not None else None
    return ScenarioResult(sc, seed, log, acc.result(), diagnostics, error, gap)


# ------------------------------------------------------------ scenarios


def alternating_morph(duration, period=4.0, start=0.0, low=geo.L_MIN, high=geo.L_MAX):
    """Size reference switching between ``low`` and ``high`` every half period."""
    out, t, small = [], start, True
    while t <= duration:
        out.append((t, low if small else high))
        small = not small
        t += 0.5 * period
    return tuple(out)


def figure8_scenario(v_max, controller="nmpc", amplitude=2.0, altitude=1.0, morph_period=4.0,
                     duration=None, morphing=True, start="rest", ramp=0.0, **kw) -> Scenario:
    """One period of the figure-8 with the size cycling continuously.

    By default the vehicle hovers at the crossing point while the
    reference passes it at full speed, so every run opens with a
    saturating catch-up transient.
    """
    ref = Figure8(v_max, amplitude, altitude, ramp=ramp)
    duration = ref.period + ramp if duration is None else duration
    duration = round(duration, 2)
    morph = alternating_morph(duration, morph_period) if morphing else ()
    return Scenario(f"figure8_v{v_max:g}", duration, ref, controller, morph, start=start, **kw)


def hover_scenario(controller="nmpc", duration=2.0, position=(0.0, 0.0, 1.0), L=geo.L_MAX, **kw) -> Scenario:
    return Scenario("hover", duration, Hover(position), controller, initial_L=L, **kw)


def grasp_scenario(controller="nmpc", payload_mass=0.3, attach=4.0, detach=10.0, duration=16.0, **kw) -> Scenario:
    """Hover, shrink around an object, carry it, release it and expand again."""
    payload = geo.Payload.cuboid(payload_mass, 0.10, 0.10, 0.10, (0.0, 0.0, -0.02))
    morph = ((1.0, geo.L_MIN), (detach + 0.5, geo.L_MAX))
    return Scenario("grasp", duration, Hover((0.0, 0.0, 1.0)), controller, morph,
                    payloads=(PayloadEvent(attach, payload, detach),), **kw)


def gap_crossing_scenario(morphing=True, kind="slot", controller="nmpc", margin=0.05, **kw) -> Scenario:
    """Shrink, pass a 0.40 m opening, expand again.

    ``slot`` flies along x through a vertical slot; ``hole`` climbs
    through a horizontal square frame.
    """
    if kind == "slot":
        start, end, center = (-1.5, 0.0, 1.0), (1.5, 0.0, 1.0), (0.0, 0.0, 1.0)
    else:
        start, end, center = (0.0, 0.0, 0.5), (0.0, 0.0, 2.5), (0.0, 0.0, 1.5)
    ref = Waypoints(((0.0, start), (2.0, start), (6.0, end)))
    morph = ((0.5, geo.L_MIN), (7.0, geo.L_MAX)) if morphing else ()
    name = f"gap_{kind}" + ("" if morphing else "_rigid")
    return Scenario(name, 8.0, ref, controller, morph, gap=GapSpec(kind, center, margin=margin), **kw)


def compare_controllers(sc: Scenario, controllers=CONTROLLERS, seed=0):
    """Run ``sc`` once per controller; a failing row does not stop the others."""
    if len(controllers) < 2:
        raise DomainError("comparison needs at least two controllers")
    rows = []
    for name in controllers:
        try:
            res = run_scenario(sc.with_(controller=name), seed)
            rows.append({"scenario": sc.name, "controller": name, "rmse": res.metrics.rmse,
                         "max_error": res.metrics.max_error, "error": res.error or ""})
        except Exception as exc:  # keep the table going
            rows.append({"scenario": sc.name, "controller": name, "rmse": float("nan"),
                         "max_error": float("nan"), "error": f"{type(exc).__name__}: {exc}"})
    return rows


def benchmark_table(speeds=(1.5, 2.0, 2.5), controllers=CONTROLLERS, seed=0, **kw):
    """Tracking errors for each speed and controller (figure-8 with morphing)."""
    rows = []
    for v in speeds:
        for row in compare_controllers(figure8_scenario(v, **kw), controllers, seed):
            rows.append({"v_max": v, **row})
    return rows


def write_table(path, rows):
    keys = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def steady_thrust(log, t0, t1):
    """Mean collective thrust over ``[t0, t1)``."""
    log = np.asarray(log)
    t = log[:, COL["t"]]
    sel = (t >= t0) & (t < t1)
    if not sel.any():
        raise DomainError(f"no samples in [{t0}, {t1})")
    return float(log[sel, COL["t1"]:COL["t4"] + 1].sum(axis=1).mean())
