import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relay.geometry import GazeDirection, gaze_vectors
from relay.tracker import detect_pupil_centroid
from relay.optics import (
    DEFAULT_CONDITIONS,
    CameraModel,
    CrLost,
    EyeModel,
    PupilOccluded,
    SceneCondition,
    feature_arrays,
    project_cr,
    project_features,
    project_pupil,
    read_pgm,
    render_frame,
    write_pgm,
)

EYE, CAM = EyeModel(), CameraModel()


def overlap_width(d, t, alpha, n=200001):
    """Brute-force width of the see-through region of a tube of diameter d and depth t.

    Orthographic view at angle alpha: the front rim spans [-d/2, d/2] cos(alpha)
    along the tilt direction, the back rim the same span shifted by t sin(alpha).
    """
    u = np.linspace(-d, d, n)
    half = 0.5 * d * math.cos(alpha)
    inside = (np.abs(u) <= half) & (np.abs(u - t * math.sin(alpha)) <= half)
    return inside.sum() * (u[1] - u[0])


@given(st.floats(0.0, 1.2), st.floats(0.0, 0.5))
def test_tube_aperture_matches_brute_force(alpha, t):
    eye = EyeModel(iris_thickness_mm=t)
    # put the camera on a ray at angle alpha from the neutral gaze, far away
    far = 1e7
    cam = CameraModel(position_mm=(far * math.sin(alpha), 0.0, eye.eyeball_radius_mm + far * math.cos(alpha)),
                      aim_mm=(0.0, 0.0, eye.eyeball_radius_mm))
    f = feature_arrays(0.0, 0.0, eye, cam)
    want = overlap_width(eye.pupil_diameter_mm, t, alpha)
    if want <= 1e-3:
        assert not f["pupil_ok"] or float(f["aperture_mm"]) < 1e-2
    else:
        assert float(f["aperture_mm"]) == pytest.approx(want, abs=2e-4)


def test_thin_iris_foreshortening_is_cosine():
    eye = EyeModel(iris_thickness_mm=0.0)
    f = feature_arrays(math.radians(10.0), 0.0, eye, CAM)
    assert float(f["minor"] / f["major"]) == pytest.approx(math.cos(math.radians(float(f["view_angle_deg"]))))


def test_pupil_centre_projects_through_the_pinhole():
    g = GazeDirection(5.0, -3.0)
    pf = project_pupil(g, EYE, CAM)
    p = (EYE.eyeball_radius_mm - 0.5 * EYE.iris_thickness_mm) * gaze_vectors(g.yaw, g.pitch)
    right, down, fwd = CAM.basis()
    rel = p - np.asarray(CAM.position_mm)
    z = rel @ fwd
    u = CAM.image_w_px / 2 + CAM.focal_px * (rel @ right) / z
    v = CAM.image_h_px / 2 + CAM.focal_px * (rel @ down) / z
    assert pf.pupil_center_img == pytest.approx((u, v), abs=1e-9)


@given(st.floats(-20, 20), st.floats(-12, 12))
def test_glint_obeys_the_reflection_law(yaw, pitch):
    g = GazeDirection(yaw, pitch)
    f = feature_arrays(g.yaw, g.pitch, EYE, CAM)
    cc = EYE.cornea_center_offset_mm * g.vector()
    right, down, fwd = CAM.basis()
    # back-project the glint pixel and intersect the corneal sphere
    ray = fwd + (float(f["cr_u"]) - CAM.image_w_px / 2) / CAM.focal_px * right \
        + (float(f["cr_v"]) - CAM.image_h_px / 2) / CAM.focal_px * down
    ray /= np.linalg.norm(ray)
    o = np.asarray(CAM.position_mm, float)
    b = ray @ (o - cc)
    s = -b - math.sqrt(b * b - ((o - cc) @ (o - cc) - EYE.cornea_radius_mm**2))
    p = o + s * ray
    n = (p - cc) / EYE.cornea_radius_mm
    to_cam = (o - p) / np.linalg.norm(o - p)
    to_led = (CAM.led_position - p) / np.linalg.norm(CAM.led_position - p)
    # a colocated illuminator reflects straight back along the surface normal
    assert np.allclose(to_cam, n, atol=1e-9)
    assert np.allclose(to_led, n, atol=1e-9)


def test_lost_features_raise():
    with pytest.raises(PupilOccluded):
        project_pupil(GazeDirection(44.0, 44.0), EyeModel(iris_thickness_mm=3.0), CAM)
    with pytest.raises(CrLost):
        project_cr(GazeDirection(40.0, 0.0), EyeModel(cornea_cap_deg=10.0), CAM)
    assert not project_features(GazeDirection(40.0, 0.0), EyeModel(cornea_cap_deg=10.0), CAM).valid


def test_rendered_pupil_area_matches_the_ellipse():
    img = render_frame(GazeDirection(0, 0), EYE, CAM, SceneCondition())
    pf = project_pupil(GazeDirection(0, 0), EYE, CAM)
    # the glint sits inside the pupil; the detector fills those rows back in
    _, area = detect_pupil_centroid(img, 65)
    assert area == pytest.approx(pf.pupil_area_px2, rel=0.01)
    assert int((img <= 65).sum()) < area
    assert (img == 255).any()


def test_sensor_noise_is_a_pure_function_of_key_and_frame():
    a = render_frame(GazeDirection(3, 2), EYE, CAM, SceneCondition(), noise_key=7, frame_id=3)
    b = render_frame(GazeDirection(3, 2), EYE, CAM, SceneCondition(), noise_key=7, frame_id=3)
    c = render_frame(GazeDirection(3, 2), EYE, CAM, SceneCondition(), noise_key=7, frame_id=4)
    clean = render_frame(GazeDirection(3, 2), EYE, CAM, SceneCondition())
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    d = a.astype(int) - clean.astype(int)
    # Irwin-Hall(4) scaled to SD sigma is bounded by 2 sqrt(3) sigma
    assert np.abs(d).max() <= math.ceil(2 * math.sqrt(3) * CAM.pixel_noise_gray)
    flat = d[(clean > 100) & (clean < 200)]
    assert flat.std() == pytest.approx(CAM.pixel_noise_gray, rel=0.1)


def test_pgm_round_trip(tmp_path):
    img = render_frame(GazeDirection(0, 0), EYE, CAM, SceneCondition(), noise_key=1)
    write_pgm(tmp_path / "f.pgm", img)
    assert np.array_equal(read_pgm(tmp_path / "f.pgm"), img)
    (tmp_path / "bad.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(ValueError):
        read_pgm(tmp_path / "bad.pgm")
    (tmp_path / "short.pgm").write_bytes(b"P5\n4 4\n255\n" + bytes(3))
    with pytest.raises(ValueError):
        read_pgm(tmp_path / "short.pgm")


def test_scene_conditions():
    assert [c.name for c in DEFAULT_CONDITIONS] == ["dark", "medium", "light"]
    assert SceneCondition("x", 100, 0).michelson_contrast == pytest.approx(1.0)
    with pytest.raises(ValueError):
        SceneCondition("x", 300, 0)


def test_eye_model_validation():
    with pytest.raises(ValueError):
        EyeModel(pupil_diameter_mm=0)
    with pytest.raises(ValueError):
        EyeModel(pupil_gray=200, iris_gray=100)
    with pytest.raises(ValueError):
        EyeModel(iris_diameter_mm=4.0)
