import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from relay.geometry import DEG_PER_MICROSTEP
from relay.motion import (
    GimbalState,
    MotionProfile,
    PositioningNoise,
    apply_positioning_noise,
    peak_velocity_of_move,
    plan_axis,
    plan_move,
    sample_trajectory,
)

P = MotionProfile()


def test_triangle_limit_is_128_steps():
    assert P.triangle_limit_steps == pytest.approx(128.0)


@pytest.mark.parametrize("d", [1, 37, 64, 128])
def test_short_moves_are_triangular(d):
    ax = plan_axis(0, d, P)
    assert ax.triangular
    assert ax.peak_pps == pytest.approx(math.sqrt(80000.0 * d))
    assert ax.duration == pytest.approx(2.0 * math.sqrt(d / 80000.0))


@pytest.mark.parametrize("d", [129, 200, 400])
def test_long_moves_cruise_at_max_speed(d):
    ax = plan_axis(0, d, P)
    assert not ax.triangular
    assert ax.peak_pps == pytest.approx(3200.0)
    assert ax.duration == pytest.approx(d / 3200.0 + 3200.0 / 80000.0)


@given(st.integers(-350, 350), st.integers(-350, 350))
def test_velocity_integrates_to_the_distance(a, b):
    ax = plan_axis(a, b, P)
    if ax.duration == 0:
        assert a == b
        return
    area, _ = quad(lambda t: float(ax.velocity(t)), 0.0, ax.duration, limit=200,
                   points=[ax.t_accel, ax.t_accel + ax.t_cruise])
    assert area == pytest.approx(b - a, abs=1e-6)
    assert float(ax.position(ax.duration)) == pytest.approx(b, abs=1e-9)
    assert float(ax.position(0.0)) == pytest.approx(a)


@given(st.integers(-300, 300))
def test_position_is_monotonic(d):
    ax = plan_axis(0, d, P)
    x = ax.position(np.linspace(0, ax.duration, 200))
    assert np.all(np.diff(x) * np.sign(d) >= -1e-12)


def test_closed_form_peak_velocity():
    assert peak_velocity_of_move(10.0) == pytest.approx(300.0)
    assert peak_velocity_of_move(20.0) == pytest.approx(360.0)
    assert peak_velocity_of_move(0.0) == 0.0
    with pytest.raises(ValueError):
        peak_velocity_of_move(-1.0)


def test_axes_run_concurrently():
    t = plan_move(GimbalState(0, 0), GimbalState(80, 40))
    assert t.duration == pytest.approx(t.x.duration)
    x, y = sample_trajectory(t, t.duration)
    assert (x, y) == pytest.approx((80 * DEG_PER_MICROSTEP, 40 * DEG_PER_MICROSTEP))
    with pytest.raises(ValueError):
        sample_trajectory(t, -0.001)


def test_gimbal_range_checked():
    with pytest.raises(ValueError):
        GimbalState(400, 0)


@given(st.integers(-200, 200), st.integers(-200, 200), st.integers(0, 4), st.integers(0, 2**32))
def test_position_noise_is_bounded_and_repeatable(x, y, e, stream):
    n = PositioningNoise(e, "position", stream)
    a = apply_positioning_noise(GimbalState(x, y), n)
    b = apply_positioning_noise(GimbalState(x, y), n)
    assert a == b
    assert abs(a.x_steps - x) <= e and abs(a.y_steps - y) <= e


def test_move_scope_needs_a_stream_and_covers_the_range():
    n = PositioningNoise(2, "move")
    with pytest.raises(ValueError):
        apply_positioning_noise(GimbalState(0, 0), n)
    rng = np.random.default_rng(0)
    dx = {apply_positioning_noise(GimbalState(0, 0), n, rng).x_steps for _ in range(200)}
    assert dx == {-2, -1, 0, 1, 2}


def test_zero_noise_is_identity():
    assert apply_positioning_noise(GimbalState(5, -7), PositioningNoise(0)) == GimbalState(5, -7)


def test_invalid_noise_config():
    with pytest.raises(ValueError):
        PositioningNoise(-1)
    with pytest.raises(ValueError):
        PositioningNoise(2, "trial")
