import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relay.geometry import DEG_PER_MICROSTEP, ViewingGeometry, angle_between, gaze_to_screen_px
from relay.motion import GimbalState, plan_move
from relay.optics import CameraModel, EyeModel, SceneCondition
from relay.tracker import (
    CalibrationFailed,
    CalibrationGrid,
    CalibrationMap,
    NoCr,
    NoPupil,
    SampleStream,
    TrackerConfig,
    build_timeline,
    calibrate,
    calibrate_tracker,
    detect_cr,
    detect_pupil_centroid,
    gimbal_target,
    measure,
    read_samples,
    run_tracker,
    write_samples,
)

GEOM, EYE, CAM = ViewingGeometry(), EyeModel(), CameraModel()


def test_grid_layout_and_corner_position():
    pts = CalibrationGrid().points()
    assert pts.shape == (13, 2)
    assert tuple(pts[0]) == (960.0, 540.0)
    # upper-left corner sits 6 % / 8.5 % in from the panel edges
    assert tuple(pts[5]) == pytest.approx((115.2, 91.8))
    # inner points halve the corner offsets
    assert tuple(pts[9]) == pytest.approx(((960 + 115.2) / 2, (540 + 91.8) / 2))
    layout = CalibrationGrid.outer_layout()
    for pid, (row, col) in layout.items():
        assert np.sign(pts[pid][0] - 960) == col - 1
        assert np.sign(pts[pid][1] - 540) == row - 1


def test_detectors_on_synthetic_frames():
    yy, xx = np.indices((100, 120))
    img = np.where((xx - 60.5) ** 2 + (yy - 40.5) ** 2 <= 400, 10, 120).astype(np.uint8)
    (x, y), area = detect_pupil_centroid(img, 65)
    assert (x, y) == pytest.approx((60.5, 40.5))
    assert area == (img == 10).sum()
    (_, _), diam = detect_pupil_centroid(img, 65, mode="diameter")
    assert diam == pytest.approx(2 * math.sqrt(area / math.pi))
    with pytest.raises(NoCr):
        detect_cr(img, 220)
    with pytest.raises(NoPupil):
        detect_pupil_centroid(np.full((50, 50), 200, np.uint8), 65)


def test_quadratic_map_recovers_an_exact_quadratic_relation():
    pts = CalibrationGrid().points()
    rays = GEOM.px_to_rays(pts[:, 0], pts[:, 1])
    # P-CR vectors that are an invertible affine image of the gaze components
    obs = np.column_stack([800 * rays[:, 0] + 30 * rays[:, 1] + 5, -20 * rays[:, 0] + 760 * rays[:, 1] - 3])
    cal = calibrate(obs, pts, GEOM)
    assert max(cal.residuals_deg) < 1e-9
    x, y = cal(obs[:, 0], obs[:, 1])
    np.testing.assert_allclose(np.column_stack([x, y]), pts, atol=1e-6)
    again = CalibrationMap.from_dict(cal.to_dict())
    assert again == cal


def test_calibration_failures():
    pts = CalibrationGrid().points()
    obs = pts.copy()
    obs[4] = np.nan
    with pytest.raises(CalibrationFailed) as exc:
        calibrate(obs, pts, GEOM)
    assert exc.value.point == 4
    bad = pts + np.random.default_rng(0).normal(0, 80, pts.shape)
    with pytest.raises(CalibrationFailed):
        calibrate(bad, pts, GEOM)
    with pytest.raises(ValueError):
        calibrate(pts[:5], pts[:5], GEOM)


def test_analytic_calibration_is_tight():
    cal = calibrate_tracker(EYE, CAM, GEOM)
    assert max(cal.residuals_deg) < 0.1


def test_raster_calibration_within_tolerance():
    cal = calibrate_tracker(EYE, CAM, GEOM, mode="raster", noise_key=11)
    assert max(cal.residuals_deg) < 0.5


@given(st.floats(100, 1800), st.floats(80, 1000))
def test_gimbal_target_is_within_half_a_step(x, y):
    s = gimbal_target(x, y, GEOM)
    yaw = math.radians(s.x_steps * DEG_PER_MICROSTEP)
    pitch = math.radians(s.y_steps * DEG_PER_MICROSTEP)
    px, py = gaze_to_screen_px(yaw, pitch, GEOM)
    err = math.degrees(float(angle_between(GEOM.px_to_rays(px, py), GEOM.px_to_rays(x, y))))
    assert err <= DEG_PER_MICROSTEP * math.sqrt(2) / 2 + 1e-9


def test_timeline_layout():
    start = GimbalState(0, 0)
    lands = [GimbalState(40, 0), GimbalState(40, 40), GimbalState(40, 40)]
    tl = build_timeline(start, lands, 300, labels=["a", "b", "c"], initial_dwell_ms=100, fixation_markers=True)
    moves = [math.ceil(round(plan_move(a, b).duration * 1000, 9)) for a, b in zip([start] + lands[:-1], lands)]
    assert len(tl) == 100 + sum(moves) + 3 * 300
    yaw, pitch = tl.gaze_deg()
    assert yaw[-1] == pytest.approx(4.5) and pitch[-1] == pytest.approx(4.5)
    # zero-length move: no move block, but the dwell and markers remain
    kinds = [b[0] for b in tl.blocks]
    assert kinds == ["dwell", "move", "dwell", "move", "dwell", "dwell"]
    msgs = [m for _, m in tl.markers]
    assert msgs.count("FIX_START c") == 1 and "c" in msgs
    first_dwell = tl.blocks[2]
    assert (first_dwell[1], "FIX_START a") in tl.markers
    assert (first_dwell[1] + 299, "FIX_END a") in tl.markers
    with pytest.raises(ValueError):
        build_timeline(start, lands, [300, 300])


def test_analytic_recording_lands_on_target():
    cal = calibrate_tracker(EYE, CAM, GEOM)
    target = GimbalState(64, -40)
    tl = build_timeline(GimbalState(0, 0), [target], 200)
    s = run_tracker(tl, EYE, CAM, SceneCondition(), cal)
    assert s.valid.all()
    want = gaze_to_screen_px(math.radians(64 * DEG_PER_MICROSTEP), math.radians(-40 * DEG_PER_MICROSTEP), GEOM)
    err = angle_between(GEOM.px_to_rays(s.x[-1], s.y[-1]), GEOM.px_to_rays(*want))
    assert math.degrees(float(err)) < 0.05


def test_lost_features_make_invalid_samples():
    pcr, size, ok = measure([0.0, 40.0], [0.0, 0.0], EyeModel(cornea_cap_deg=35.0), CAM, SceneCondition())
    assert ok.tolist() == [True, False]
    assert np.isnan(pcr[1]).all() and np.isnan(size[1])
    with pytest.raises(ValueError):
        measure([0.0], [0.0], EYE, CAM, SceneCondition(), mode="vector")


def test_raster_measurement_is_deterministic():
    a = measure([3.0] * 4, [1.0] * 4, EYE, CAM, SceneCondition(), "raster", TrackerConfig(), 5)
    b = measure([3.0] * 4, [1.0] * 4, EYE, CAM, SceneCondition(), "raster", TrackerConfig(), 5)
    np.testing.assert_array_equal(a[0], b[0])
    # frames differ by noise only
    assert len({tuple(r) for r in a[0]}) > 1


def test_sample_log_round_trip():
    s = SampleStream(np.arange(5, dtype=np.int64) + 10, np.array([1.0, 2.5, np.nan, 4.0, 5.0]),
                     np.array([3.0, 3.5, np.nan, 4.0, 1.0]), np.array([100.0, 101.0, np.nan, 99.0, 98.0]),
                     np.array([True, True, False, True, True]), [(11, "TRIALID 1"), (14, "FIX_END 1")])
    buf = io.StringIO()
    write_samples(buf, s, ["HEADER"])
    text = buf.getvalue()
    assert "12\t.\t.\t." in text and "MSG\t11\tTRIALID 1" in text
    back = read_samples(io.StringIO(text))
    np.testing.assert_array_equal(back.t_ms, s.t_ms)
    np.testing.assert_array_equal(back.valid, s.valid)
    np.testing.assert_allclose(back.x, s.x)
    assert (11, "TRIALID 1") in back.markers and (10, "HEADER") in back.markers


def test_tracker_config_validation():
    with pytest.raises(ValueError):
        TrackerConfig(pupil_size_mode="volume")
