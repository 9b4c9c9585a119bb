import itertools

import numpy as np
import pytest

from morphquad import geometry as geo
from morphquad import nmpc
from morphquad import quaternion as quat
from morphquad.dynamics import State
from morphquad.errors import DomainError, InvalidConfigError
from morphquad.ocp import LinearModel, MultipleShootingSolver

CONVERGED = nmpc.NmpcConfig(max_iterations=30, tolerance=1e-9)


def perturbed_state():
    q = quat.normalize(np.array([1.0, 0.05, -0.03, 0.02]))
    return State((0.3, -0.2, 1.1), (0.2, 0.0, 0.0), q, (0.1, 0.2, -0.1)).as_array()


@pytest.fixture(scope="module")
def converged(props_large):
    ref = nmpc.ReferenceWindow.hover((0, 0, 1), CONVERGED.horizon)
    return ref, nmpc.solve(perturbed_state(), ref, props_large, CONVERGED)


# ---------------------------------------------------------------- attitude error and cost


def test_quaternion_error_examples(rng):
    q = quat.normalize(rng.standard_normal(4))
    np.testing.assert_allclose(nmpc.quaternion_error(q, q), 0.0, atol=1e-16)
    yaw90 = quat.from_axis_angle((0, 0, 1), np.pi / 2)
    np.testing.assert_allclose(nmpc.quaternion_error(quat.IDENTITY, yaw90), [0, 0, np.sin(np.pi / 4)], atol=1e-15)
    q_r = quat.normalize(rng.standard_normal(4))
    np.testing.assert_array_equal(nmpc.quaternion_error(q, q_r), nmpc.quaternion_error(-q, q_r))
    np.testing.assert_allclose(nmpc.quaternion_error(q, -q), 0.0, atol=1e-15)


def test_quaternion_error_rejects_non_unit():
    with pytest.raises(DomainError):
        nmpc.quaternion_error([1.0, 0.1, 0, 0], quat.IDENTITY)


def test_cost_on_reference_is_zero():
    ref = nmpc.ReferenceWindow.hover((0, 0, 1), 5)
    us = np.full((5, 4), 4.0)
    assert nmpc.cost(ref.states, us, nmpc.ReferenceWindow(ref.states, us), nmpc.NmpcConfig(horizon=5)) == 0.0


def test_cost_of_single_position_offset():
    cfg = nmpc.NmpcConfig(horizon=5)
    ref = nmpc.ReferenceWindow(nmpc.ReferenceWindow.hover((0, 0, 1), 5).states, np.full((5, 4), 4.0))
    xs = np.array(ref.states)
    e = np.array([0.1, -0.2, 0.05])
    xs[2, 0:3] += e
    assert nmpc.cost(xs, ref.inputs, ref, cfg) == pytest.approx(200 * e @ e, rel=1e-14)


def test_cost_matches_naive_accumulation(rng):
    n = 6
    cfg = nmpc.NmpcConfig(horizon=n, q_terminal=tuple(rng.uniform(0, 50, 12)))
    ref_states = np.array([State(rng.standard_normal(3), rng.standard_normal(3),
                                 quat.normalize(rng.standard_normal(4)), rng.standard_normal(3)).as_array()
                           for _ in range(n + 1)])
    ref = nmpc.ReferenceWindow(ref_states, rng.uniform(1, 5, (n, 4)))
    xs = ref_states + 0.01 * rng.standard_normal(ref_states.shape)
    xs[:, 6:10] = quat.normalize(xs[:, 6:10])
    us = ref.inputs + 0.1 * rng.standard_normal((n, 4))
    q, qn, r = np.diag(cfg.Q), np.diag(cfg.Q_N), np.diag(cfg.R)
    total = 0.0
    for k in range(n + 1):
        qe = quat.multiply(quat.conjugate(xs[k, 6:10]), ref_states[k, 6:10])
        qe = qe if qe[0] >= 0 else -qe
        e = list(xs[k, 0:6] - ref_states[k, 0:6]) + list(qe[1:]) + list(xs[k, 10:13] - ref_states[k, 10:13])
        w = qn if k == n else q
        for i in range(12):
            total += w[i] * e[i] * e[i]
        if k < n:
            for i in range(4):
                total += r[i] * (us[k, i] - ref.inputs[k, i]) ** 2
    assert nmpc.cost(xs, us, ref, cfg) == pytest.approx(total, rel=1e-12)


def test_cost_defaults_reference_inputs_to_hover(props_large):
    ref = nmpc.ReferenceWindow.hover((0, 0, 1), 3)
    us = np.tile(props_large.hover_thrusts(), (3, 1))
    assert nmpc.cost(ref.states, us, ref, nmpc.NmpcConfig(horizon=3), props_large) == 0.0
    with pytest.raises(DomainError):
        nmpc.cost(ref.states, us, ref, nmpc.NmpcConfig(horizon=3))


# ---------------------------------------------------------------- solve


def test_hover_fixed_point(props_large):
    ref = nmpc.ReferenceWindow.hover((0, 0, 1), 20)
    sol = nmpc.solve(ref.states[0], ref, props_large)
    wrench = props_large.allocation @ sol.u0
    assert wrench[0] == pytest.approx(1.665 * 9.81, abs=1e-6)
    np.testing.assert_allclose(wrench[1:], 0.0, atol=1e-9)
    assert sol.iterations == 0


def saturating_window(props, n=20, dt=0.05, acc=10.0):
    assert acc > (4 * 6.5 - props.mass * 9.81) / props.mass
    t = np.arange(n + 1) * dt
    states = np.tile(State(position=(0, 0, 1)).as_array(), (n + 1, 1))
    states[:, 2] += 0.5 * acc * t**2
    states[:, 5] = acc * t
    return nmpc.ReferenceWindow(states, np.full((n, 4), props.mass * (9.81 + acc) / 4))


def test_saturating_reference_clamps_exactly():
    # centred COG: full thrust on every rotor is torque free
    props = geo.symmetric_quad_properties()
    ref = saturating_window(props)
    for iters in (1, 5):
        sol = nmpc.solve(ref.states[0], ref, props, nmpc.NmpcConfig(max_iterations=iters))
        assert np.all(sol.inputs == 6.5)
        assert sol.active_upper.all()
        assert np.isfinite(sol.kkt)


def test_saturating_reference_with_offset_cog(props_large):
    # full thrust everywhere would tip the vehicle; bounds still hold exactly
    ref = saturating_window(props_large)
    sol = nmpc.solve(ref.states[0], ref, props_large, nmpc.NmpcConfig(max_iterations=5))
    assert np.max(sol.inputs) == 6.5
    assert np.all(sol.inputs <= 6.5) and np.all(sol.inputs >= 0.05)
    np.testing.assert_array_equal(sol.inputs[sol.active_upper], 6.5)


def test_inputs_always_inside_the_box(props_large, rng):
    ref = nmpc.ReferenceWindow.hover((0, 0, 1), 20)
    for _ in range(5):
        x = State(rng.normal(0, 1, 3) + (0, 0, 1), rng.normal(0, 2, 3),
                  quat.normalize(np.r_[1.0, rng.normal(0, 0.3, 3)]), rng.normal(0, 2, 3)).as_array()
        sol = nmpc.solve(x, ref, props_large, nmpc.NmpcConfig(max_iterations=3))
        assert np.all(sol.inputs >= 0.05) and np.all(sol.inputs <= 6.5)


def test_converged_solution_is_dynamically_consistent(props_large, converged):
    ref, sol = converged
    model = nmpc.QuadrotorShootingModel(props_large, CONVERGED.dt)
    defects = model.local(sol.states[1:], model.step(sol.states[:-1], sol.inputs))
    assert np.max(np.abs(defects)) < 1e-8
    np.testing.assert_array_equal(sol.states[0], perturbed_state())


def test_kkt_residual_is_non_increasing(converged):
    _, sol = converged
    hist = np.array(sol.kkt_history)
    assert sol.kkt < CONVERGED.tolerance
    assert np.all(np.diff(hist) <= 0)


def test_warm_start_on_unchanged_problem(props_large, converged):
    ref, sol = converged
    again = nmpc.solve(perturbed_state(), ref, props_large, CONVERGED, warm_start=sol)
    assert again.iterations <= 1
    np.testing.assert_allclose(again.inputs, sol.inputs, atol=1e-9)


def test_weight_scaling_leaves_the_minimiser(props_large, converged):
    ref, sol = converged
    scaled = nmpc.solve(perturbed_state(), ref, props_large, CONVERGED.scaled(7.0))
    np.testing.assert_allclose(scaled.inputs, sol.inputs, atol=1e-8)
    assert scaled.cost == pytest.approx(7.0 * sol.cost, rel=1e-6)


def test_solution_is_immutable(converged):
    _, sol = converged
    with pytest.raises(ValueError):
        sol.inputs[0, 0] = 1.0
    with pytest.raises(Exception):
        sol.kkt = 0.0


def test_shifted_warm_start(converged):
    _, sol = converged
    xs, us = sol.shifted(0.0)
    np.testing.assert_allclose(xs, sol.states, rtol=0, atol=1e-15)
    xs, us = sol.shifted(1.0)
    np.testing.assert_allclose(xs[:-1], sol.states[1:])
    np.testing.assert_allclose(us[:-1], sol.inputs[1:])
    np.testing.assert_allclose(np.linalg.norm(sol.shifted(0.3)[0][:, 6:10], axis=1), 1.0)


def test_input_validation(props_large):
    ref = nmpc.ReferenceWindow.hover((0, 0, 1), 10)
    with pytest.raises(DomainError):
        nmpc.solve(ref.states[0], ref, props_large)  # horizon 10 vs 20
    bad = ref.states[0].copy()
    bad[6] = 2.0
    with pytest.raises(DomainError):
        nmpc.solve(bad, ref, props_large, nmpc.NmpcConfig(horizon=10))
    with pytest.raises(DomainError):
        nmpc.ReferenceWindow(np.zeros((3, 13)))
    for kw in (dict(horizon=0), dict(dt=0.0), dict(u_min=7.0), dict(q_position=-1.0)):
        with pytest.raises(InvalidConfigError):
            nmpc.NmpcConfig(**kw)


# ---------------------------------------------------------------- linear toy problems


def double_integrator(dt=0.1):
    a = np.kron(np.array([[1.0, dt], [0.0, 1.0]]), np.eye(2))
    b = np.kron(np.array([[0.5 * dt * dt], [dt]]), np.eye(2))
    return a, b


@pytest.mark.parametrize("x0, bound", [((1.0, -0.5, 0.2, 0.1), 100.0), ((1.0, -0.5, 0.2, 0.1), 3.0), ((-4, 2, 0, 1), 2.0)])
def test_one_step_problem_matches_grid_search(x0, bound):
    a, b = double_integrator()
    q, qn, r = np.diag([10.0, 10.0, 1.0, 1.0]), np.diag([50.0, 50.0, 5.0, 5.0]), 0.01 * np.eye(2)
    x0 = np.array(x0, dtype=float)
    solver = MultipleShootingSolver(LinearModel(a, b), q, qn, r, -bound, bound)
    zero = np.zeros((2, 4))
    res = solver.solve(x0, zero, np.zeros((1, 2)), np.array([x0, x0]), np.zeros((1, 2)), max_iter=5)
    u_free = -np.linalg.solve(b.T @ qn @ b + r, b.T @ qn @ a @ x0)
    centre = np.clip(u_free, -bound, bound)
    step = 1e-3
    best, best_u = np.inf, None
    grid = [np.clip(c + np.arange(-300, 301) * step, -bound, bound) for c in centre]
    for u in itertools.product(*grid):
        x1 = a @ x0 + b @ np.array(u)
        j = x1 @ qn @ x1 + np.array(u) @ r @ np.array(u)
        if j < best:
            best, best_u = j, np.array(u)
    np.testing.assert_allclose(res.inputs[0], best_u, atol=step)
    assert np.all(np.abs(res.inputs) <= bound)


def test_unconstrained_linear_problem_matches_lqr(rng):
    a, b = double_integrator()
    n = 15
    q, qn, r = np.diag([10.0, 10.0, 1.0, 1.0]), np.diag([50.0, 50.0, 5.0, 5.0]), 0.1 * np.eye(2)
    x0 = rng.standard_normal(4)
    solver = MultipleShootingSolver(LinearModel(a, b), q, qn, r, -1e6, 1e6)
    res = solver.solve(x0, np.zeros((n + 1, 4)), np.zeros((n, 2)), np.tile(x0, (n + 1, 1)), np.zeros((n, 2)), max_iter=3)
    # backward Riccati recursion, forward rollout
    p = qn
    gains = []
    for _ in range(n):
        k = np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
        p = q + a.T @ p @ (a - b @ k)
        gains.append(k)
    x, us = x0, []
    for k in reversed(gains):
        us.append(-k @ x)
        x = a @ x + b @ us[-1]
    np.testing.assert_allclose(res.inputs, np.array(us), atol=1e-6)
    assert res.iterations == 1


# ---------------------------------------------------------------- linearization


def finite_difference_jacobians(x, u, props, dt, eps=1e-6):
    model = nmpc.QuadrotorShootingModel(props, dt)
    f0 = model.step(x, u)
    a = np.zeros((12, 12))
    for i in range(12):
        d = np.zeros(12)
        d[i] = eps
        plus = model.local(f0, model.step(model.retract(x, d), u))
        minus = model.local(f0, model.step(model.retract(x, -d), u))
        a[:, i] = (plus - minus) / (2 * eps)
    b = np.zeros((12, 4))
    for i in range(4):
        d = np.zeros(4)
        d[i] = eps
        b[:, i] = (model.local(f0, model.step(x, u + d)) - model.local(f0, model.step(x, u - d))) / (2 * eps)
    return a, b


def test_hover_linearization_kinematic_block(props_large):
    x = State(position=(0, 0, 1)).as_array()
    a, b, c = nmpc.linearize_dynamics(x, props_large.hover_thrusts(), props_large, 0.05)
    np.testing.assert_allclose(a[0:3, 3:6], 0.05 * np.eye(3), atol=1e-15)
    np.testing.assert_allclose(c, 0.0, atol=1e-15)


@pytest.mark.parametrize("seed", range(4))
def test_linearization_matches_finite_differences(props_small, seed):
    rng = np.random.default_rng(seed)
    x = State(rng.standard_normal(3), rng.standard_normal(3), quat.normalize(rng.standard_normal(4)),
              rng.normal(0, 2, 3)).as_array()
    u = rng.uniform(1, 6, 4)
    a, b, _ = nmpc.linearize_dynamics(x, u, props_small, 0.05)
    a_fd, b_fd = finite_difference_jacobians(x, u, props_small, 0.05)
    assert np.linalg.norm(a - a_fd) <= 1e-4 * np.linalg.norm(a_fd)
    assert np.linalg.norm(b - b_fd) <= 1e-4 * np.linalg.norm(b_fd)


def test_rate_rows_scale_with_inverse_inertia(props_large):
    x = State(position=(0, 0, 1)).as_array()
    u = props_large.hover_thrusts()
    _, b1, _ = nmpc.linearize_dynamics(x, u, props_large, 0.05)
    _, b2, _ = nmpc.linearize_dynamics(x, u, props_large.replace(inertia=2 * props_large.inertia), 0.05)
    np.testing.assert_allclose(b2[9:12], 0.5 * b1[9:12], rtol=1e-12, atol=1e-15)


def test_defect_is_measured_around_the_given_node(props_large):
    x = State(position=(0, 0, 1)).as_array()
    u = props_large.hover_thrusts()
    target = State(position=(0.01, 0, 1)).as_array()
    _, _, c = nmpc.linearize_dynamics(x, u, props_large, 0.05, x_next=target)
    np.testing.assert_allclose(c[0:3], [-0.01, 0, 0], atol=1e-15)
