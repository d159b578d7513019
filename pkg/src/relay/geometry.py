"""Unit conversions and ray geometry shared by the simulator.

World frame used throughout the package: origin at the eye's centre of
rotation, ``+z`` towards the screen, ``+y`` up and ``+x`` towards the
viewer's right (screen right).  Screen pixels grow rightwards and downwards
from the top-left corner of the panel.

Gaze rotations are composed yaw-then-pitch (Fick order), which is how the
two stacked stepper motors of the gimbal act on the eye.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEG_PER_MICROSTEP = 0.1125
TRACKABLE_LIMIT_DEG = 45.0


class OutOfScreen(ValueError):
    """The gaze ray does not hit the display panel."""


class OffCanvas(ValueError):
    """The reflected laser ray misses the canvas.

    ``spot_mm`` holds where the ray meets the (unbounded) canvas plane, if it
    does, and ``reflection_deg`` the angle between the reflected ray and the
    incoming laser.
    """

    def __init__(self, spot_mm, reflection_deg):
        super().__init__(f"laser spot {spot_mm} mm is off the canvas")
        self.spot_mm = spot_mm
        self.reflection_deg = reflection_deg


def steps_to_deg(microsteps):
    return microsteps * DEG_PER_MICROSTEP


def deg_to_steps(deg):
    """Inverse of :func:`steps_to_deg`; not rounded."""
    return deg / DEG_PER_MICROSTEP


def pps_to_degps(pps):
    if np.any(np.asarray(pps) < 0):
        raise ValueError("pulse rate must be non-negative")
    return pps * DEG_PER_MICROSTEP


@dataclass(frozen=True)
class ViewingGeometry:
    eye_to_screen_mm: float = 927.0
    screen_w_mm: float = 531.36
    screen_h_mm: float = 298.89
    screen_w_px: int = 1920
    screen_h_px: int = 1080
    # pixel hit by the neutral gaze; None means the panel centre
    screen_center_px: tuple[float, float] | None = None

    def __post_init__(self):
        for name in ("eye_to_screen_mm", "screen_w_mm", "screen_h_mm", "screen_w_px", "screen_h_px"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.screen_center_px is None:
            object.__setattr__(self, "screen_center_px", (self.screen_w_px / 2.0, self.screen_h_px / 2.0))
        else:
            object.__setattr__(self, "screen_center_px", tuple(float(v) for v in self.screen_center_px))

    @property
    def pitch_x_mm(self) -> float:
        return self.screen_w_mm / self.screen_w_px

    @property
    def pitch_y_mm(self) -> float:
        return self.screen_h_mm / self.screen_h_px

    @property
    def pixel_pitch_mm(self) -> float:
        """Mean pixel pitch; the default panel has square pixels."""
        return 0.5 * (self.pitch_x_mm + self.pitch_y_mm)

    def px_to_mm(self, x_px, y_px):
        """Screen pixels to panel millimetres (x right, y up) about the neutral point."""
        cx, cy = self.screen_center_px
        return (np.asarray(x_px) - cx) * self.pitch_x_mm, (cy - np.asarray(y_px)) * self.pitch_y_mm

    def mm_to_px(self, x_mm, y_mm):
        cx, cy = self.screen_center_px
        return cx + np.asarray(x_mm) / self.pitch_x_mm, cy - np.asarray(y_mm) / self.pitch_y_mm

    def px_to_rays(self, x_px, y_px):
        """Unit gaze vectors (..., 3) from the eye to screen pixels."""
        x_mm, y_mm = self.px_to_mm(x_px, y_px)
        v = np.stack(np.broadcast_arrays(x_mm, y_mm, np.full(np.shape(x_mm), self.eye_to_screen_mm)), axis=-1)
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    def on_screen(self, x_px, y_px) -> bool:
        return bool(0.0 <= x_px <= self.screen_w_px and 0.0 <= y_px <= self.screen_h_px)


@dataclass(frozen=True)
class GazeDirection:
    yaw_deg: float = 0.0
    pitch_deg: float = 0.0

    def __post_init__(self):
        if abs(self.yaw_deg) >= TRACKABLE_LIMIT_DEG or abs(self.pitch_deg) >= TRACKABLE_LIMIT_DEG:
            raise ValueError(f"gaze ({self.yaw_deg}, {self.pitch_deg}) outside the trackable range")

    @property
    def yaw(self) -> float:
        return math.radians(self.yaw_deg)

    @property
    def pitch(self) -> float:
        return math.radians(self.pitch_deg)

    def vector(self) -> np.ndarray:
        return gaze_vectors(self.yaw, self.pitch)


@dataclass(frozen=True)
class LaserRig:
    canvas_distance_mm: float = 700.0
    canvas_w_mm: float = 679.0
    canvas_h_mm: float = 498.0
    # the laser diode sits at the canvas centre; coordinates are relative to it
    laser_origin: tuple[float, float] = field(default=(0.0, 0.0), init=False)

    def __post_init__(self):
        for name in ("canvas_distance_mm", "canvas_w_mm", "canvas_h_mm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def gaze_vectors(yaw_rad, pitch_rad):
    """Fick-order unit gaze vectors; broadcasts over array inputs."""
    yaw_rad, pitch_rad = np.broadcast_arrays(np.asarray(yaw_rad, float), np.asarray(pitch_rad, float))
    cp = np.cos(pitch_rad)
    return np.stack([cp * np.sin(yaw_rad), np.sin(pitch_rad), cp * np.cos(yaw_rad)], axis=-1)


def fick_angles(v):
    """Inverse of :func:`gaze_vectors`: (yaw, pitch) in radians."""
    v = np.asarray(v, float)
    yaw = np.arctan2(v[..., 0], v[..., 2])
    pitch = np.arctan2(v[..., 1], np.hypot(v[..., 0], v[..., 2]))
    return yaw, pitch


def angle_between(u, v):
    """Angle in radians between vectors, robust for tiny angles."""
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    cross = np.linalg.norm(np.cross(u, v), axis=-1)
    return np.arctan2(cross, np.sum(u * v, axis=-1))


def px_offset_to_deg(offset_px, geom: ViewingGeometry):
    """Visual angle subtended by an on-axis screen offset."""
    return np.degrees(np.arctan(np.asarray(offset_px) * geom.pixel_pitch_mm / geom.eye_to_screen_mm))


def deg_to_px_offset(angle_deg, geom: ViewingGeometry):
    return np.tan(np.radians(angle_deg)) * geom.eye_to_screen_mm / geom.pixel_pitch_mm


def gaze_to_screen_point(g: GazeDirection, geom: ViewingGeometry) -> tuple[float, float]:
    """Pixel where the gaze ray meets the screen plane.

    Raises :class:`OutOfScreen` when the intersection falls outside the panel.
    """
    x_px, y_px = gaze_to_screen_px(g.yaw, g.pitch, geom)
    x_px, y_px = float(x_px), float(y_px)
    if not (np.isfinite(x_px) and np.isfinite(y_px)) or not geom.on_screen(x_px, y_px):
        raise OutOfScreen(f"gaze ({g.yaw_deg:.3f}, {g.pitch_deg:.3f}) deg lands at ({x_px:.1f}, {y_px:.1f}) px")
    return x_px, y_px


def gaze_to_screen_px(yaw_rad, pitch_rad, geom: ViewingGeometry):
    """Vectorised screen intersection with no bounds check."""
    d = geom.eye_to_screen_mm
    x_mm = d * np.tan(yaw_rad)
    y_mm = d * np.tan(pitch_rad) / np.cos(yaw_rad)
    return geom.mm_to_px(x_mm, y_mm)


def screen_point_to_gaze(x_px, y_px, geom: ViewingGeometry) -> GazeDirection:
    yaw, pitch = screen_px_to_angles(x_px, y_px, geom)
    return GazeDirection(math.degrees(float(yaw)), math.degrees(float(pitch)))


def screen_px_to_angles(x_px, y_px, geom: ViewingGeometry):
    """Fick (yaw, pitch) in radians that aim the eye at screen pixels."""
    x_mm, y_mm = geom.px_to_mm(x_px, y_px)
    yaw = np.arctan2(x_mm, geom.eye_to_screen_mm)
    pitch = np.arctan2(y_mm, np.hypot(x_mm, geom.eye_to_screen_mm))
    return yaw, pitch


def reflect_laser(g: GazeDirection, rig: LaserRig):
    """Spot of the mirror-reflected laser on the canvas plane.

    The mirror is normal to the gaze and sits at the rotation centre; the laser
    comes from the canvas centre along ``-z``.  Returns ``(spot_mm, angle_deg)``
    without checking the canvas bounds; ``spot_mm`` is None if the reflected ray
    never reaches the canvas plane.
    """
    n = g.vector()
    incoming = np.array([0.0, 0.0, -1.0])
    out = incoming - 2.0 * np.dot(incoming, n) * n
    angle = math.degrees(float(angle_between(out, np.array([0.0, 0.0, 1.0]))))
    if out[2] <= 0:
        return None, angle
    s = rig.canvas_distance_mm / out[2]
    return (float(s * out[0]), float(s * out[1])), angle


def laser_spot(g: GazeDirection, rig: LaserRig) -> tuple[float, float]:
    spot, angle = reflect_laser(g, rig)
    if spot is None or abs(spot[0]) > rig.canvas_w_mm / 2 or abs(spot[1]) > rig.canvas_h_mm / 2:
        raise OffCanvas(spot, angle)
    return spot
