import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relay.geometry import (
    DEG_PER_MICROSTEP,
    GazeDirection,
    LaserRig,
    OffCanvas,
    OutOfScreen,
    ViewingGeometry,
    angle_between,
    deg_to_px_offset,
    deg_to_steps,
    fick_angles,
    gaze_to_screen_point,
    gaze_to_screen_px,
    gaze_vectors,
    laser_spot,
    pps_to_degps,
    px_offset_to_deg,
    reflect_laser,
    screen_px_to_angles,
    steps_to_deg,
)

angles = st.floats(-40.0, 40.0, allow_nan=False)
GEOM = ViewingGeometry()


def rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def test_unit_conversions():
    assert steps_to_deg(8) == pytest.approx(0.9)
    assert deg_to_steps(0.9) == pytest.approx(8)
    assert pps_to_degps(3200) == pytest.approx(360.0)


@given(angles, angles)
def test_gaze_vector_matches_rotation_matrices(yaw, pitch):
    # yaw about +y, then pitch about the rotated x axis (Fick order); pitch up is +y
    want = rot_y(math.radians(yaw)) @ rot_x(-math.radians(pitch)) @ np.array([0.0, 0.0, 1.0])
    got = gaze_vectors(math.radians(yaw), math.radians(pitch))
    np.testing.assert_allclose(got, want, atol=1e-12)
    assert np.linalg.norm(got) == pytest.approx(1.0)


@given(angles, angles)
def test_fick_angles_invert_gaze_vectors(yaw, pitch):
    y, p = fick_angles(gaze_vectors(math.radians(yaw), math.radians(pitch)))
    assert math.degrees(y) == pytest.approx(yaw, abs=1e-9)
    assert math.degrees(p) == pytest.approx(pitch, abs=1e-9)


@given(st.floats(-15, 15), st.floats(-9, 9))
def test_screen_intersection_matches_ray_plane_oracle(yaw, pitch):
    v = gaze_vectors(math.radians(yaw), math.radians(pitch))
    s = GEOM.eye_to_screen_mm / v[2]
    x_mm, y_mm = s * v[0], s * v[1]
    x_px, y_px = gaze_to_screen_px(math.radians(yaw), math.radians(pitch), GEOM)
    cx, cy = GEOM.screen_center_px
    assert x_px == pytest.approx(cx + x_mm / GEOM.pitch_x_mm, abs=1e-9)
    assert y_px == pytest.approx(cy - y_mm / GEOM.pitch_y_mm, abs=1e-9)
    yaw2, pitch2 = screen_px_to_angles(x_px, y_px, GEOM)
    assert math.degrees(yaw2) == pytest.approx(yaw, abs=1e-9)
    assert math.degrees(pitch2) == pytest.approx(pitch, abs=1e-9)


def test_neutral_gaze_hits_screen_centre():
    assert gaze_to_screen_point(GazeDirection(0, 0), GEOM) == pytest.approx((960.0, 540.0))


def test_gaze_off_the_panel_raises():
    with pytest.raises(OutOfScreen):
        gaze_to_screen_point(GazeDirection(30.0, 0.0), GEOM)


def test_gaze_beyond_range_rejected():
    with pytest.raises(ValueError):
        GazeDirection(45.0, 0.0)


def test_visual_angle_of_pixel_offsets():
    pitch = GEOM.pixel_pitch_mm
    assert px_offset_to_deg(1.0, GEOM) == pytest.approx(math.degrees(math.atan(pitch / 927.0)))
    assert deg_to_px_offset(px_offset_to_deg(37.0, GEOM), GEOM) == pytest.approx(37.0)


def test_angle_between_is_accurate_for_tiny_angles():
    t = 1e-9
    assert angle_between([1.0, 0.0, 0.0], [math.cos(t), math.sin(t), 0.0]) == pytest.approx(t, rel=1e-6)


@given(angles, angles)
def test_reflection_doubles_the_gaze_angle(yaw, pitch):
    g = GazeDirection(yaw, pitch)
    gaze = math.degrees(angle_between(g.vector(), [0.0, 0.0, 1.0]))
    _, angle = reflect_laser(g, LaserRig())
    assert abs(angle - 2.0 * gaze) <= 1e-9


def test_outermost_line_vertex_reflects_at_27_degrees():
    g = GazeDirection(15 * 8 * DEG_PER_MICROSTEP, 0.0)
    spot, angle = reflect_laser(g, LaserRig())
    assert angle == pytest.approx(27.0, abs=1e-9)
    assert spot[0] == pytest.approx(700.0 * math.tan(math.radians(27.0)))
    # 356.7 mm from the centre: past the 339.5 mm half-width of the canvas
    with pytest.raises(OffCanvas) as exc:
        laser_spot(g, LaserRig())
    assert exc.value.reflection_deg == pytest.approx(27.0)


def test_neutral_mirror_sends_the_laser_back_to_its_origin():
    assert laser_spot(GazeDirection(0, 0), LaserRig()) == pytest.approx((0.0, 0.0))
