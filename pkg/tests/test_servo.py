import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morphquad.errors import DomainError, InvalidConfigError
from morphquad.geometry import L_MAX, L_MIN
from morphquad.servo import ServoParams, servo_advance, servo_command, servo_step

sizes = st.floats(L_MIN, L_MAX)


def test_no_command_at_the_reference():
    assert servo_command(0.3, 0.3).rate == 0.0


def test_full_stroke_command():
    cmd = servo_command(L_MIN, L_MAX, ServoParams(sigma=0.5))
    assert cmd.rate == pytest.approx(-0.26, rel=1e-12)
    assert not cmd.reference_clamped


def test_rate_limit():
    assert servo_command(L_MIN, L_MAX, ServoParams(sigma=0.1, rate_limit=0.3)).rate == -0.3


def test_out_of_range_reference_is_clamped_and_flagged():
    cmd = servo_command(0.2, 0.3)
    assert cmd.reference_clamped
    assert cmd.rate == servo_command(L_MIN, 0.3).rate


def test_first_order_response():
    params = ServoParams(sigma=0.5)
    L = servo_advance(L_MAX, L_MIN, params.sigma, params, substeps=5000)
    assert (L - L_MIN) == pytest.approx(np.exp(-1.0) * (L_MAX - L_MIN), rel=0.02)


def test_step_examples():
    assert servo_step(0.3, 0.0, 0.01) == 0.3
    assert servo_step(0.29, -1.0, 0.1) == L_MIN
    L = L_MAX
    for _ in range(100):
        L = servo_step(L, -0.3, 0.01)
    assert L == L_MIN
    for _ in range(100):
        L = servo_step(L, 0.3, 0.01)
    assert L == L_MAX


def test_full_shrink_is_31_4_percent():
    assert round(100 * (L_MAX - L_MIN) / L_MAX, 1) == 31.4


def test_validation():
    with pytest.raises(InvalidConfigError):
        ServoParams(sigma=0.0)
    with pytest.raises(InvalidConfigError):
        ServoParams(rate_limit=-1.0)
    with pytest.raises(DomainError):
        servo_step(0.3, 0.1, 0.0)
    with pytest.raises(DomainError):
        servo_command(np.nan, 0.3)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(-1.0, 2.0), st.floats(0.001, 0.2)), min_size=1, max_size=30),
       sizes, st.floats(0.05, 2.0), st.floats(0.01, 1.0))
def test_size_never_leaves_bounds(schedule, L0, sigma, rate):
    params = ServoParams(sigma=sigma, rate_limit=rate)
    L = L0
    for L_ref, dt in schedule:
        L = servo_advance(L, L_ref, dt, params, substeps=10)
        assert L_MIN <= L <= L_MAX


@settings(max_examples=200, deadline=None)
@given(sizes, sizes, st.floats(0.05, 2.0), st.floats(0.01, 1.0))
def test_closed_loop_never_overshoots(L0, L_ref, sigma, rate):
    params = ServoParams(sigma=sigma, rate_limit=rate)
    L, h = L0, 1e-3
    side = np.sign(L_ref - L0)
    for _ in range(2000):
        L = servo_step(L, servo_command(L_ref, L, params).rate, h, params)
        assert np.sign(L_ref - L) in (side, 0.0)
