"""Command line: ``morphquad run|compare|calibrate``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import config as cfgmod
from . import geometry as geo
from . import harness
from .calibration import calibrate_layout
from .errors import MorphQuadError
from .reference import Figure8, Hover, Waypoints


def _float_pairs(text):
    """``"0:0.414, 2:0.284"`` -> ``((0.0, 0.414), (2.0, 0.284))``."""
    out = []
    for item in text.split(","):
        if item.strip():
            t, v = item.split(":")
            out.append((float(t), float(v)))
    return tuple(out)


def _points(text):
    """``"0: 0 0 1; 4: 1 0 1"`` -> ``((0.0, (0, 0, 1)), (4.0, (1, 0, 1)))``."""
    out = []
    for item in text.split(";"):
        if item.strip():
            t, p = item.split(":")
            out.append((float(t), tuple(float(v) for v in p.split())))
    return tuple(out)


def scenario_from_config(cp, controller=None, physics_hz=None) -> harness.Scenario:
    """Build a scenario from the ``[scenario]`` section and the module sections."""
    if not cp.has_section("scenario"):
        raise cfgmod.InvalidConfigError("config has no [scenario] section")
    s = cp["scenario"]
    kind = s.get("kind", "figure8")
    common = dict(
        controller=controller or s.get("controller", "nmpc"),
        servo=cfgmod.servo_from_config(cp),
        nmpc=cfgmod.nmpc_from_config(cp),
        pid=cfgmod.pid_from_config(cp),
        lqr=cfgmod.lqr_from_config(cp),
        layout=cfgmod.layout_from_config(cp),
        control_hz=cfgmod.floats(cp, "simulation", "control_hz", fallback=100.0),
        physics_hz=physics_hz or cfgmod.floats(cp, "simulation", "physics_hz", fallback=1000.0),
    )
    if kind == "gap":
        return harness.gap_crossing_scenario(
            s.getboolean("morphing", True), s.get("gap_kind", "slot"),
            margin=s.getfloat("margin", 0.05), **common,
        )
    if kind == "grasp":
        return harness.grasp_scenario(
            payload_mass=s.getfloat("payload_mass", 0.3), attach=s.getfloat("attach", 4.0),
            detach=s.getfloat("detach", 10.0), duration=s.getfloat("duration", 16.0), **common,
        )
    if kind == "figure8":
        ref = Figure8(s.getfloat("v_max", 2.5), s.getfloat("amplitude", 2.0), s.getfloat("altitude", 1.0),
                      ramp=s.getfloat("ramp", 0.0))
        default_duration = ref.period + ref.ramp
        default_start = "rest"
    elif kind == "hover":
        ref = Hover(tuple(cfgmod.floats(cp, "scenario", "position", 3, fallback=(0.0, 0.0, 1.0))))
        default_duration, default_start = 5.0, "reference"
    elif kind == "waypoints":
        ref = Waypoints(_points(s["waypoints"]))
        default_duration, default_start = ref.points[-1][0] + 1.0, "reference"
    else:
        raise cfgmod.InvalidConfigError(f"unknown scenario kind {kind!r}")
    duration = round(s.getfloat("duration", default_duration), 2)
    morph = _float_pairs(s["morph"]) if "morph" in s else (
        harness.alternating_morph(duration, s.getfloat("morph_period", 4.0)) if s.getboolean("morphing", kind == "figure8") else ()
    )
    payloads = ()
    if "payload_attach" in s:
        mass = s.getfloat("payload_mass", 0.3)
        payload = geo.Payload.cuboid(mass, *cfgmod.floats(cp, "scenario", "payload_size", 3, fallback=(0.1, 0.1, 0.1)))
        detach = s.getfloat("payload_detach") if "payload_detach" in s else None
        payloads = (harness.PayloadEvent(s.getfloat("payload_attach"), payload, detach),)
    dist = harness.Disturbance(
        force=cfgmod.floats(cp, "scenario", "force", 3, fallback=(0.0, 0.0, 0.0)),
        torque=cfgmod.floats(cp, "scenario", "torque", 3, fallback=(0.0, 0.0, 0.0)),
        force_std=s.getfloat("force_std", 0.0),
        torque_std=s.getfloat("torque_std", 0.0),
        bandwidth=s.getfloat("bandwidth", 2.0),
        drag=s.getfloat("drag", 0.0),
    )
    return harness.Scenario(
        s.get("name", kind), duration, ref, morph=morph, payloads=payloads, disturbance=dist,
        initial_L=s.getfloat("initial_L", geo.L_MAX), start=s.get("start", default_start), **common,
    )


def _cmd_run(args):
    cp = cfgmod.load_config(args.config)
    sc = scenario_from_config(cp, args.controller, args.physics_hz)
    res = harness.run_scenario(sc, args.seed)
    path = res.write(args.out)
    for k, v in res.summary().items():
        print(f"{k} = {v}")
    print(f"trajectory written to {path}")
    return 0 if res.ok else 1


def _cmd_compare(args):
    cp = cfgmod.load_config(args.config)
    b = cp["bench"] if cp.has_section("bench") else {}
    speeds = cfgmod.floats(cp, "bench", "speeds", 3, fallback=(1.5, 2.0, 2.5)) if "speeds" in b else (1.5, 2.0, 2.5)
    controllers = tuple(c.strip() for c in b.get("controllers", "pid,lqr,nmpc").split(","))
    if args.controller:
        controllers = (args.controller,) + tuple(c for c in controllers if c != args.controller)
    rows = []
    for v in speeds:
        if not cp.has_section("scenario"):
            cp.add_section("scenario")
        cp["scenario"]["kind"] = "figure8"
        cp["scenario"]["v_max"] = repr(float(v))
        cp["scenario"]["name"] = f"figure8_v{v:g}"
        sc = scenario_from_config(cp, physics_hz=args.physics_hz)
        for row in harness.compare_controllers(sc, controllers, args.seed):
            rows.append({"v_max": v, **row})
            print(f"v_max={v:g} {row['controller']:>5}  rmse={row['rmse']:.4f}  max={row['max_error']:.4f} {row['error']}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_table(out / "comparison.csv", rows)
    print(f"table written to {out / 'comparison.csv'}")
    return 0


def _cmd_calibrate(args):
    cp = cfgmod.load_config(args.config)
    report = calibrate_layout(cfgmod.targets_from_config(cp), cfgmod.layout_from_config(cp))
    print(report.table())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.write_layout(out / "calibrated_layout.cfg", report.layout)
    with open(out / "calibration.json", "w") as fh:
        json.dump(report.key_values(), fh, indent=2, default=float)
    print(f"layout written to {out / 'calibrated_layout.cfg'}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="morphquad", description="Morphing quadrotor simulation and control")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (
        ("run", _cmd_run, "run one scenario"),
        ("compare", _cmd_compare, "figure-8 controller comparison"),
        ("calibrate", _cmd_calibrate, "fit the airframe layout to measured mass properties"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", help="INI file overlaid on the shipped defaults")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--physics-hz", type=float, default=None)
        sp.add_argument("--controller", choices=harness.CONTROLLERS, default=None)
        sp.set_defaults(func=fn)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MorphQuadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
