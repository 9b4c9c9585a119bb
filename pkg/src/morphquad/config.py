"""INI configuration: shipped defaults overlaid by user files."""
from __future__ import annotations

import configparser
from importlib import resources
from pathlib import Path

from .baselines import LqrConfig, PidGains
from .calibration import CalibrationTargets, RingLayout
from .errors import InvalidConfigError
from .nmpc import NmpcConfig
from .servo import ServoParams

DEFAULT_CONFIG = "ringrotor_default.cfg"


def _parser():
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str  # keep the case of keys like L_min
    return cp


def default_config_text():
    return resources.files("morphquad.data").joinpath(DEFAULT_CONFIG).read_text()


def load_config(*paths) -> configparser.ConfigParser:
    """Shipped defaults, then each file in ``paths`` on top."""
    cp = _parser()
    cp.read_string(default_config_text(), source=DEFAULT_CONFIG)
    for p in paths:
        p = Path(p)
        if not p.is_file():
            raise InvalidConfigError(f"config file not found: {p}")
        try:
            cp.read(p)
        except configparser.Error as exc:
            raise InvalidConfigError(f"cannot parse {p}: {exc}") from exc
    return cp


def floats(cp, section, key, n=None, fallback=None):
    """Comma-separated floats; a single value is broadcast to ``n``."""
    if not cp.has_option(section, key):
        if fallback is None:
            raise InvalidConfigError(f"missing [{section}] {key}")
        return fallback
    raw = cp.get(section, key)
    try:
        vals = [float(v) for v in raw.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise InvalidConfigError(f"[{section}] {key} = {raw!r} is not numeric") from exc
    if n is None:
        if len(vals) != 1:
            raise InvalidConfigError(f"[{section}] {key} expects one value")
        return vals[0]
    if len(vals) == 1:
        vals = vals * n
    if len(vals) != n:
        raise InvalidConfigError(f"[{section}] {key} expects {n} values, got {len(vals)}")
    return tuple(vals)


def _section_floats(cp, section, keys):
    out = {}
    for key, n in keys.items():
        if cp.has_option(section, key):
            out[key] = floats(cp, section, key, n)
    return out


def layout_from_config(cp) -> RingLayout:
    kw = _section_floats(cp, "layout", {k: None for k in RingLayout.__dataclass_fields__
                                        if k not in ("battery_size", "servo_size", "board_size")})
    kw.update(_section_floats(cp, "layout", {"battery_size": 3, "servo_size": 3, "board_size": 3}))
    vehicle = {"total_mass": "total_mass", "L_min": "L_min", "L_max": "L_max", "k_t": "k_t", "k_c": "k_c"}
    for key, opt in vehicle.items():
        if cp.has_option("vehicle", opt):
            kw[key] = floats(cp, "vehicle", opt)
    unknown = set(cp.options("layout")) - set(RingLayout.__dataclass_fields__) if cp.has_section("layout") else set()
    if unknown:
        raise InvalidConfigError(f"unknown [layout] keys: {sorted(unknown)}")
    return RingLayout(**kw)


def targets_from_config(cp) -> CalibrationTargets:
    kw = _section_floats(cp, "targets", {"inertia_large": 3, "inertia_small": 3, "cog_large": 3,
                                         "L_large": None, "L_small": None})
    if cp.has_option("vehicle", "total_mass"):
        kw["mass"] = floats(cp, "vehicle", "total_mass")
    return CalibrationTargets(**kw)


def servo_from_config(cp) -> ServoParams:
    kw = _section_floats(cp, "servo", {"sigma": None, "rate_limit": None})
    for key in ("L_min", "L_max"):
        if cp.has_option("vehicle", key):
            kw[key] = floats(cp, "vehicle", key)
    return ServoParams(**kw)


def _gravity(cp):
    return floats(cp, "simulation", "gravity", fallback=9.81)


def nmpc_from_config(cp) -> NmpcConfig:
    kw = _section_floats(cp, "nmpc", {"dt": None, "q_position": 3, "q_velocity": 3, "q_attitude": 3,
                                      "q_rates": 3, "r": 4, "u_min": None, "u_max": None, "tolerance": None})
    for key in ("horizon", "max_iterations", "substeps"):
        if cp.has_option("nmpc", key):
            kw[key] = cp.getint("nmpc", key)
    if cp.has_option("nmpc", "q_terminal"):
        kw["q_terminal"] = floats(cp, "nmpc", "q_terminal", 12)
    return NmpcConfig(gravity=_gravity(cp), **kw)


def _bounds(cp):
    n = nmpc_from_config(cp)
    return {"u_min": n.u_min, "u_max": n.u_max}


def pid_from_config(cp) -> PidGains:
    kw = _section_floats(cp, "pid", {"k_p": 3, "k_v": 3, "k_R": 3, "k_w": 3})
    tick = 1.0 / floats(cp, "simulation", "control_hz", fallback=100.0)
    return PidGains(tick=tick, gravity=_gravity(cp), **_bounds(cp), **kw)


def lqr_from_config(cp) -> LqrConfig:
    kw = _section_floats(cp, "lqr", {"r": 3, "thrust_weight": None})
    if cp.has_option("lqr", "q"):
        q = [float(v) for v in cp.get("lqr", "q").split(",")]
        kw["q"] = q[0] if len(q) == 1 else tuple(floats(cp, "lqr", "q", 12))
    if cp.has_option("lqr", "recompute_every"):
        kw["recompute_every"] = cp.getint("lqr", "recompute_every")
    dt = 1.0 / floats(cp, "simulation", "control_hz", fallback=100.0)
    return LqrConfig(dt=dt, gravity=_gravity(cp), **_bounds(cp), **kw)


def write_layout(path, layout: RingLayout):
    """Write a config file holding ``layout`` in [vehicle] and [layout]."""
    cp = _parser()
    d = layout.to_dict()
    cp["vehicle"] = {k: repr(float(d[k])) for k in ("total_mass", "L_min", "L_max", "k_t", "k_c")}
    cp["layout"] = {
        k: ", ".join(repr(float(x)) for x in v) if isinstance(v, tuple) else repr(float(v))
        for k, v in d.items() if k not in cp["vehicle"]
    }
    with open(path, "w") as fh:
        cp.write(fh)
