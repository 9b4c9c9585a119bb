import numpy as np
import pytest
from scipy.linalg import solve_discrete_are

from morphquad import geometry as geo
from morphquad import nmpc
from morphquad import quaternion as quat
from morphquad.baselines import (
    LqrConfig,
    LqrController,
    PidGains,
    dare_residual,
    lqr_control,
    lqr_gain,
    lqr_model,
    pid_control,
    pid_desired_acceleration,
    pid_wrench,
    solve_dare,
)
from morphquad.dynamics import State
from morphquad.errors import ControllerError, InvalidConfigError
from morphquad.reference import Hover

HOVER = Hover((0.0, 0.0, 1.0))


def on_reference():
    return HOVER(0.0).state_array()


def test_pid_hover_gives_hover_thrusts(props_large):
    np.testing.assert_allclose(pid_control(on_reference(), HOVER(0.0), props_large),
                               props_large.hover_thrusts(), rtol=1e-12)


def test_pid_position_gain():
    x = State(position=(0.0, 0.0, 1.0)).as_array()
    ref = Hover((1.0, 0.0, 1.0))(0.0)
    np.testing.assert_allclose(pid_desired_acceleration(x, ref, PidGains()), [2.0, 0.0, 9.81], atol=1e-15)


def test_pid_torque_is_proportional_to_inertia(props_large):
    x = on_reference()
    x[6:10] = quat.from_axis_angle((1, 0, 0), 0.1)
    full = pid_wrench(x, HOVER(0.0), props_large)
    half = pid_wrench(x, HOVER(0.0), props_large.replace(inertia=0.5 * props_large.inertia))
    np.testing.assert_allclose(half[1:], 0.5 * full[1:], rtol=1e-12)
    assert full[1] < 0  # restoring torque against a positive roll


def test_pid_gains_are_per_tick():
    g = PidGains(tick=0.01)
    np.testing.assert_allclose(g.attitude_gain, 2500.0)
    np.testing.assert_allclose(g.rate_gain, 23.0)


def test_baseline_outputs_are_clamped_elementwise(props_large):
    x = on_reference()
    x[0:3] = (3.0, -2.0, -1.0)
    x[10:13] = (4.0, -3.0, 2.0)
    ref = HOVER(0.0)
    raw = props_large.thrusts_for_wrench(pid_wrench(x, ref, props_large))
    out = pid_control(x, ref, props_large)
    np.testing.assert_array_equal(out, np.clip(raw, 0.05, 6.5))
    assert np.any(raw > 6.5) or np.any(raw < 0.05)
    u = lqr_control(x, ref, props_large)
    assert np.all(u >= 0.05) and np.all(u <= 6.5)


def test_dare_solution_residual_and_scipy_agreement(props_large):
    cfg = LqrConfig()
    a, b, _ = lqr_model(HOVER(0.0), props_large, cfg)
    p = solve_dare(a, b, cfg.Q, cfg.R)
    assert np.max(np.abs(dare_residual(p, a, b, cfg.Q, cfg.R))) < 1e-8
    ref = solve_discrete_are(a, b, cfg.Q, cfg.R)
    np.testing.assert_allclose(p, ref, rtol=1e-8, atol=1e-10 * np.max(np.abs(ref)))


def test_dare_on_a_scalar_system():
    # p = a^2 p - a^2 p^2 b^2 / (r + b^2 p) + q with a = b = q = r = 1: p = golden ratio
    p = solve_dare(np.eye(1), np.eye(1), np.eye(1), np.eye(1))
    assert p[0, 0] == pytest.approx((1 + np.sqrt(5)) / 2, rel=1e-14)


def test_dare_unstabilisable_system_raises():
    with pytest.raises(ControllerError):
        solve_dare(np.eye(1) * 2.0, np.zeros((1, 1)), np.eye(1), np.eye(1))


def test_lqr_gain_follows_the_inertia(props_large, props_small):
    k_large, _ = lqr_gain(HOVER(0.0), props_large)
    k_small, _ = lqr_gain(HOVER(0.0), props_small)
    rate_block = slice(9, 12)
    assert np.linalg.norm(k_large[1:, rate_block] - k_small[1:, rate_block]) > 0.05 * np.linalg.norm(k_large[1:, rate_block])


def test_lqr_hover_gives_hover_thrusts(props_large):
    np.testing.assert_allclose(lqr_control(on_reference(), HOVER(0.0), props_large),
                               props_large.hover_thrusts(), rtol=1e-12)


def test_lqr_closed_loop_model_is_stable(props_small):
    cfg = LqrConfig()
    a, b, _ = lqr_model(HOVER(0.0), props_small, cfg)
    k, _ = lqr_gain(HOVER(0.0), props_small, cfg)
    assert np.max(np.abs(np.linalg.eigvals(a - b @ k))) < 1.0


def test_all_controllers_agree_at_hover(props_small):
    ref = HOVER(0.0)
    x = on_reference()
    window = nmpc.ReferenceWindow.hover((0.0, 0.0, 1.0), 20)
    u_nmpc = nmpc.solve(x, window, props_small).u0
    u_pid = pid_control(x, ref, props_small)
    u_lqr = lqr_control(x, ref, props_small)
    np.testing.assert_allclose(u_pid, u_nmpc, atol=1e-6)
    np.testing.assert_allclose(u_lqr, u_nmpc, atol=1e-6)


def test_lqr_controller_recomputes_on_schedule(props_large, props_small):
    ctrl = LqrController(LqrConfig(recompute_every=2))
    x = on_reference()
    ctrl(x, HOVER(0.0), props_large)
    k0 = ctrl._gain.copy()
    ctrl(x, HOVER(0.0), props_small)
    np.testing.assert_array_equal(ctrl._gain, k0)
    ctrl(x, HOVER(0.0), props_small)
    assert not np.array_equal(ctrl._gain, k0)


def test_singular_allocation_is_a_controller_error(props_large):
    rotors = np.zeros((4, 3))
    h = geo.allocation_matrix(np.zeros(3), rotors)
    with pytest.raises(ControllerError):
        pid_control(on_reference(), HOVER(0.0), props_large.replace(allocation=h))


@pytest.mark.parametrize("kw", [dict(k_p=0.0), dict(k_R=(1, -1, 1)), dict(tick=0.0), dict(u_min=7.0)])
def test_pid_gain_validation(kw):
    with pytest.raises(InvalidConfigError):
        PidGains(**kw)


@pytest.mark.parametrize("kw", [dict(q=-1.0), dict(r=(1, 0, 1)), dict(thrust_weight=0.0), dict(recompute_every=0)])
def test_lqr_config_validation(kw):
    with pytest.raises(InvalidConfigError):
        LqrConfig(**kw)
