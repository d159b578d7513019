import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relay import _backend, _fallback
from relay.optics import CameraModel, EyeModel, SceneCondition, render_params
from relay.tracker import _rois, pose_features

kernels = pytest.importorskip("relay._kernels")
EYE, CAM = EyeModel(), CameraModel()


def frames(yaw, pitch):
    f = pose_features(np.asarray(yaw, float), np.asarray(pitch, float), EYE, CAM)
    return render_params(f, EYE, CAM, SceneCondition()), _rois(f, CAM, 3)


def test_compiled_backend_selected():
    assert _backend.BACKEND == "cython"


@given(st.lists(st.tuples(st.floats(-18, 18), st.floats(-11, 11)), min_size=1, max_size=8),
       st.integers(0, 2**63 - 1), st.floats(0.0, 6.0))
def test_backends_agree_bit_for_bit(poses, key, sigma):
    y, p = zip(*poses)
    params, rois = frames(y, p)
    fr = np.arange(len(y), dtype=np.int64)
    args = (params, rois, key, fr, sigma, 10.0, 120.0, 65, 220, 2, 100)
    np.testing.assert_array_equal(kernels.measure_batch(*args), _fallback.measure_batch(*args))


def test_full_frame_render_agrees():
    params, _ = frames([4.0], [-2.0])
    a = kernels.render_roi(params[0], 0, 0, CAM.image_w_px, CAM.image_h_px, 5, 9, 3.0, 10.0, 120.0)
    b = _fallback.render_roi(params[0], 0, 0, CAM.image_w_px, CAM.image_h_px, 5, 9, 3.0, 10.0, 120.0)
    assert np.array_equal(a, b)


def disk(h, w, cx, cy, r, inside, outside):
    yy, xx = np.indices((h, w))
    return np.where((xx - cx) ** 2 + (yy - cy) ** 2 <= r * r, inside, outside).astype(np.uint8)


@pytest.mark.parametrize("impl", [kernels, _fallback])
def test_detect_symmetric_shapes(impl):
    img = disk(80, 90, 40.0, 35.0, 20, 10, 120)
    glint = disk(80, 90, 50.0, 30.0, 3, 255, 0)
    img = np.maximum(img, glint)
    px, py, n, cx, cy, ncr = impl.detect(img, 65, 220, 2, 50)
    assert (cx, cy) == pytest.approx((50.0, 30.0))
    assert ncr == (glint == 255).sum()
    # the glint hides part of the disk; the row fill restores the interior
    assert (px, py) == pytest.approx((40.0, 35.0), abs=0.05)
    assert n == pytest.approx((disk(80, 90, 40.0, 35.0, 20, 1, 0)).sum(), abs=3)


@pytest.mark.parametrize("impl", [kernels, _fallback])
def test_detect_empty_frame(impl):
    px, py, n, cx, cy, ncr = impl.detect(np.full((20, 20), 128, np.uint8), 65, 220, 2, 10)
    assert np.isnan(px) and np.isnan(cx) and n == 0 and ncr == 0
