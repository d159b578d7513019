"""Artificial eye seen through the tracker camera.

The pupil is a circular aperture at the front of a short tube (the iris
thickness), centred on the gaze axis at the eyeball surface.  Seen from an
oblique direction the far rim of the tube hides part of the aperture, so the
visible width across the tilt shrinks from ``d cos(a)`` to
``d cos(a) - t sin(a)``.  The corneal reflection is the glint of the IR LED
on a spherical cornea (a convex mirror).

All feature functions are vectorised over arrays of gaze angles; the scalar
``project_pupil``/``project_cr`` wrappers raise when a feature is lost.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .geometry import GazeDirection, gaze_vectors


class PupilOccluded(RuntimeError):
    pass


class CrLost(RuntimeError):
    pass


@dataclass(frozen=True)
class EyeModel:
    eyeball_radius_mm: float = 12.0
    pupil_diameter_mm: float = 5.0
    iris_thickness_mm: float = 0.1
    iris_diameter_mm: float = 12.0
    cornea_radius_mm: float = 7.8
    # rotation centre to corneal centre of curvature, along the gaze axis
    cornea_center_offset_mm: float = 8.0
    cornea_cap_deg: float = 50.0
    pupil_gray: int = 10
    iris_gray: int = 120
    sclera_gray: int = 150

    def __post_init__(self):
        if not self.pupil_diameter_mm > 0:
            raise ValueError("pupil_diameter_mm must be positive")
        if self.iris_thickness_mm < 0:
            raise ValueError("iris_thickness_mm must be >= 0")
        for name in ("pupil_gray", "iris_gray", "sclera_gray"):
            if not 0 <= getattr(self, name) <= 255:
                raise ValueError(f"{name} must be within 0..255")
        if not self.pupil_gray < self.iris_gray:
            raise ValueError("the pupil must be darker than the iris")
        if self.iris_diameter_mm <= self.pupil_diameter_mm:
            raise ValueError("iris must be wider than the pupil")


@dataclass(frozen=True)
class CameraModel:
    # relative to the eye's rotation centre: left of and below the eye, towards the screen
    position_mm: tuple[float, float, float] = (-72.0, -200.0, 530.0)
    # aimed at the front of the resting eye
    aim_mm: tuple[float, float, float] = (0.0, 0.0, 12.0)
    focal_px: float = 11500.0
    image_w_px: int = 400
    image_h_px: int = 320
    # None: the IR illuminator is co-located with the lens
    ir_led_position_mm: tuple[float, float, float] | None = None
    cr_radius_px: float = 5.0
    pixel_noise_gray: float = 3.0
    ambient_gain: float = 0.0

    def __post_init__(self):
        if not self.focal_px > 0:
            raise ValueError("focal_px must be positive")
        if not (self.image_w_px > 0 and self.image_h_px > 0):
            raise ValueError("image dimensions must be positive")
        if self.pixel_noise_gray < 0 or self.cr_radius_px <= 0:
            raise ValueError("invalid camera noise or glint size")

    @property
    def led_position(self) -> np.ndarray:
        return np.asarray(self.ir_led_position_mm if self.ir_led_position_mm is not None else self.position_mm, float)

    def basis(self):
        """Camera right, down and forward unit vectors in world coordinates."""
        pos = np.asarray(self.position_mm, float)
        fwd = np.asarray(self.aim_mm, float) - pos
        fwd /= np.linalg.norm(fwd)
        up = np.array([0.0, 1.0, 0.0])
        down = -(up - np.dot(up, fwd) * fwd)
        down /= np.linalg.norm(down)
        right = np.cross(down, fwd)
        return right, down, fwd

    def project(self, points):
        """Pinhole projection of world points (..., 3) to image px; returns (u, v, depth)."""
        right, down, fwd = self.basis()
        p = np.asarray(points, float) - np.asarray(self.position_mm, float)
        z = p @ fwd
        u = 0.5 * self.image_w_px + self.focal_px * (p @ right) / z
        v = 0.5 * self.image_h_px + self.focal_px * (p @ down) / z
        return u, v, z

    def direction_in_image(self, vecs):
        """Image-plane direction angle of world vectors (ignores perspective)."""
        right, down, _ = self.basis()
        return np.arctan2(vecs @ down, vecs @ right)


@dataclass(frozen=True)
class SceneCondition:
    name: str = "medium"
    background_gray: int = 128
    target_gray: int = 12

    def __post_init__(self):
        for v in (self.background_gray, self.target_gray):
            if not 0 <= v <= 255:
                raise ValueError("gray levels must be within 0..255")
        if self.background_gray + self.target_gray == 0:
            raise ValueError("contrast undefined for two black levels")

    @property
    def michelson_contrast(self) -> float:
        return abs(self.target_gray - self.background_gray) / (self.target_gray + self.background_gray)


DEFAULT_CONDITIONS = (
    SceneCondition("dark", 20, 105),
    SceneCondition("medium", 128, 12),
    SceneCondition("light", 230, 19),
)


@dataclass
class ProjectedFeatures:
    pupil_center_img: tuple[float, float] = (math.nan, math.nan)
    pupil_major_px: float = math.nan
    pupil_minor_px: float = math.nan
    pupil_orientation: float = 0.0  # major-axis angle, radians, image frame
    pupil_area_px2: float = math.nan
    cr_center_img: tuple[float, float] = (math.nan, math.nan)
    valid: bool = False
    pupil_aperture_mm: float = math.nan
    view_angle_deg: float = math.nan
    extras: dict = field(default_factory=dict, repr=False)


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def feature_arrays(yaw_rad, pitch_rad, eye: EyeModel, cam: CameraModel) -> dict:
    """Analytic pupil and CR features for arrays of Fick gaze angles.

    Lost features come back with ``pupil_ok``/``cr_ok`` False and NaN fields.
    """
    g = gaze_vectors(yaw_rad, pitch_rad)
    cam_pos = np.asarray(cam.position_mm, float)
    R, t, d = eye.eyeball_radius_mm, eye.iris_thickness_mm, eye.pupil_diameter_mm

    front = R * g
    to_cam = _unit(cam_pos - front)
    cos_a = np.sum(g * to_cam, axis=-1)
    sin_a = np.linalg.norm(np.cross(g, to_cam), axis=-1)
    aperture = d * cos_a - t * sin_a
    pupil_ok = (cos_a > 0) & (aperture > 0)

    # visible-aperture centroid: midway between the front and back rims
    pu, pv, depth = cam.project((R - 0.5 * t) * g)
    mag = cam.focal_px / depth
    major = d * mag
    minor = np.where(pupil_ok, aperture, np.nan) * mag
    tilt = g - cos_a[..., None] * to_cam
    minor_dir = cam.direction_in_image(tilt)
    orientation = np.where(sin_a > 1e-12, minor_dir + 0.5 * np.pi, 0.0)

    iu, iv, idepth = cam.project(front)
    imag = cam.focal_px / idepth

    cc = eye.cornea_center_offset_mm * g
    bis = _unit(_unit(cam_pos - cc) + _unit(cam.led_position - cc))
    glint = cc + eye.cornea_radius_mm * bis
    cap = np.degrees(np.arctan2(np.linalg.norm(np.cross(bis, g), axis=-1), np.sum(bis * g, axis=-1)))
    cr_ok = cap <= eye.cornea_cap_deg
    cu, cv, _ = cam.project(glint)

    nan = np.nan
    return {
        "pupil_u": np.where(pupil_ok, pu, nan),
        "pupil_v": np.where(pupil_ok, pv, nan),
        "major": np.where(pupil_ok, major, nan),
        "minor": minor,
        "orientation": orientation,
        "area": np.pi * 0.25 * np.where(pupil_ok, major, nan) * minor,
        "aperture_mm": np.where(pupil_ok, aperture, nan),
        "view_angle_deg": np.degrees(np.arctan2(sin_a, cos_a)),
        "iris_u": iu,
        "iris_v": iv,
        "iris_major": eye.iris_diameter_mm * imag,
        "iris_minor": eye.iris_diameter_mm * imag * np.clip(cos_a, 0.0, None),
        "cr_u": np.where(cr_ok, cu, nan),
        "cr_v": np.where(cr_ok, cv, nan),
        "pupil_ok": pupil_ok,
        "cr_ok": cr_ok,
    }


def project_pupil(gaze: GazeDirection, eye: EyeModel, cam: CameraModel) -> ProjectedFeatures:
    f = feature_arrays(gaze.yaw, gaze.pitch, eye, cam)
    if not bool(f["pupil_ok"]):
        raise PupilOccluded(f"pupil hidden by the iris rim at {float(f['view_angle_deg']):.1f} deg")
    return ProjectedFeatures(
        pupil_center_img=(float(f["pupil_u"]), float(f["pupil_v"])),
        pupil_major_px=float(f["major"]),
        pupil_minor_px=float(f["minor"]),
        pupil_orientation=float(f["orientation"]),
        pupil_area_px2=float(f["area"]),
        valid=True,
        pupil_aperture_mm=float(f["aperture_mm"]),
        view_angle_deg=float(f["view_angle_deg"]),
    )


def project_cr(gaze: GazeDirection, eye: EyeModel, cam: CameraModel) -> tuple[float, float]:
    f = feature_arrays(gaze.yaw, gaze.pitch, eye, cam)
    if not bool(f["cr_ok"]):
        raise CrLost("corneal reflection beyond the corneal cap")
    return float(f["cr_u"]), float(f["cr_v"])


def project_features(gaze: GazeDirection, eye: EyeModel, cam: CameraModel) -> ProjectedFeatures:
    """Both features; ``valid`` is False if either is lost."""
    try:
        out = project_pupil(gaze, eye, cam)
        out.cr_center_img = project_cr(gaze, eye, cam)
    except (PupilOccluded, CrLost):
        return ProjectedFeatures()
    return out


def background_gray(eye: EyeModel, cam: CameraModel, scene: SceneCondition) -> float:
    return float(eye.sclera_gray) + cam.ambient_gain * scene.background_gray


def render_params(f: dict, eye: EyeModel, cam: CameraModel, scene: SceneCondition) -> np.ndarray:
    """Per-frame raster parameter rows (N, NPARAM) from :func:`feature_arrays` output."""
    n = np.size(f["pupil_ok"])
    p = np.zeros((n, _backend.NPARAM))
    ok = np.ravel(f["pupil_ok"])
    cos_o, sin_o = np.cos(np.ravel(f["orientation"])), np.sin(np.ravel(f["orientation"]))
    p[:, _backend.P_CX] = np.where(ok, np.ravel(f["pupil_u"]), 0.0)
    p[:, _backend.P_CY] = np.where(ok, np.ravel(f["pupil_v"]), 0.0)
    p[:, _backend.P_A] = np.where(ok, 0.5 * np.ravel(f["major"]), 0.0)
    p[:, _backend.P_B] = np.where(ok, 0.5 * np.ravel(f["minor"]), 0.0)
    p[:, _backend.P_COS] = cos_o
    p[:, _backend.P_SIN] = sin_o
    p[:, _backend.I_CX] = np.ravel(f["iris_u"])
    p[:, _backend.I_CY] = np.ravel(f["iris_v"])
    p[:, _backend.I_A] = 0.5 * np.ravel(f["iris_major"])
    p[:, _backend.I_B] = 0.5 * np.ravel(f["iris_minor"])
    p[:, _backend.I_COS] = cos_o
    p[:, _backend.I_SIN] = sin_o
    cr_ok = np.ravel(f["cr_ok"])
    p[:, _backend.C_CX] = np.where(cr_ok, np.ravel(f["cr_u"]), 0.0)
    p[:, _backend.C_CY] = np.where(cr_ok, np.ravel(f["cr_v"]), 0.0)
    p[:, _backend.C_R] = np.where(cr_ok, cam.cr_radius_px, 0.0)
    p[:, _backend.BG] = background_gray(eye, cam, scene)
    return p


def render_frame(
    gaze: GazeDirection,
    eye: EyeModel,
    cam: CameraModel,
    scene: SceneCondition,
    noise_key: int | None = None,
    frame_id: int = 0,
) -> np.ndarray:
    """Full grayscale camera frame (uint8, rows x cols).

    Pixel noise is added only when ``noise_key`` is given; it is a pure
    function of (key, frame_id, pixel), so re-rendering is deterministic.
    """
    f = feature_arrays(gaze.yaw, gaze.pitch, eye, cam)
    params = render_params(f, eye, cam, scene)[0]
    sigma = cam.pixel_noise_gray if noise_key is not None else 0.0
    return _backend.render_roi(
        params, 0, 0, cam.image_w_px, cam.image_h_px, int(noise_key or 0), int(frame_id), sigma,
        float(eye.pupil_gray), float(eye.iris_gray),
    )


# magic, width, height, maxval, then exactly one whitespace byte before the pixels
_PGM_HEADER = re.compile(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def write_pgm(path, image: np.ndarray) -> None:
    img = np.ascontiguousarray(image, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    m = _PGM_HEADER.match(data)
    if m is None:
        raise ValueError("not a binary PGM file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError("only 8-bit PGM is supported")
    body = data[m.end():m.end() + w * h]
    if len(body) != w * h:
        raise ValueError("truncated PGM file")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()
