"""Video P-CR tracking chain: detectors, 13-point calibration, 1 kHz sampling.

A recording is driven by a :class:`Timeline`, the per-millisecond gimbal pose
produced from a list of landing positions.  Poses that repeat during a dwell
share one feature evaluation; in raster mode every tick still gets its own
frame (and its own sensor noise).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import _backend
from .geometry import (
    DEG_PER_MICROSTEP,
    ViewingGeometry,
    angle_between,
    deg_to_steps,
    fick_angles,
    gaze_to_screen_px,
    screen_px_to_angles,
)
from .motion import GimbalState, MotionProfile, plan_move, sample_trajectory
from .optics import CameraModel, EyeModel, SceneCondition, feature_arrays, render_params


class NoPupil(RuntimeError):
    pass


class NoCr(RuntimeError):
    pass


class CalibrationFailed(RuntimeError):
    def __init__(self, point: int, residual_deg: float):
        super().__init__(f"calibration point {point} failed (residual {residual_deg:.3f} deg)")
        self.point = point
        self.residual_deg = residual_deg


CALIBRATION_TOLERANCE_DEG = 0.5


@dataclass(frozen=True)
class TrackerConfig:
    # midway between the default pupil (10) and iris (120) gray levels
    pupil_threshold: int = 65
    cr_threshold: int = 220
    cr_dilate_px: int = 2
    min_pupil_area_px: int = 100
    pupil_size_mode: str = "area"
    # system units per thresholded pixel (area) or per pixel of diameter
    size_scale: float = 1.0
    roi_margin_px: int = 3

    def __post_init__(self):
        if self.pupil_size_mode not in ("area", "diameter"):
            raise ValueError(f"unknown pupil size mode {self.pupil_size_mode!r}")
        if not 0 <= self.pupil_threshold < self.cr_threshold <= 255:
            raise ValueError("need 0 <= pupil_threshold < cr_threshold <= 255")
        if self.cr_dilate_px < 0 or self.min_pupil_area_px < 1 or self.roi_margin_px < 2:
            raise ValueError("invalid detector geometry settings")
        if not self.size_scale > 0:
            raise ValueError("size_scale must be positive")


def _size_from_count(count, mode: str, scale: float):
    count = np.asarray(count, float)
    if mode == "area":
        return count * scale
    return 2.0 * np.sqrt(count / np.pi) * scale


# -- detectors ---------------------------------------------------------------


def detect_pupil_centroid(
    image,
    threshold: int,
    mode: str = "area",
    cr_threshold: int = 220,
    dilate: int = 2,
    min_area: int = 100,
    scale: float = 1.0,
) -> tuple[tuple[float, float], float]:
    """Centre of mass of the dark pixels, with the glint masked out.

    Returns ``((x, y), size)``; x is the column and y the row coordinate.
    """
    img = np.ascontiguousarray(image, dtype=np.uint8)
    if img.size == 0:
        raise ValueError("empty image")
    px, py, n, _, _, _ = _backend.detect(img, int(threshold), int(cr_threshold), int(dilate), int(min_area))
    if not math.isfinite(px):
        raise NoPupil(f"{int(n)} dark pixels, fewer than {min_area}")
    return (px, py), float(_size_from_count(n, mode, scale))


def detect_cr(image, threshold_high: int) -> tuple[float, float]:
    img = np.ascontiguousarray(image, dtype=np.uint8)
    if img.size == 0:
        raise ValueError("empty image")
    _, _, _, cx, cy, _ = _backend.detect(img, 0, int(threshold_high), 2, 1)
    if not math.isfinite(cx):
        raise NoCr("no saturated pixels")
    return cx, cy


# -- calibration ---------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationGrid:
    """The 13-point grid.

    Point order: centre; top, bottom, left, right mid-edges; upper-left,
    upper-right, lower-left, lower-right corners; then the four inner points
    halfway along the same diagonals.
    """

    screen_w_px: int = 1920
    screen_h_px: int = 1080
    # outer points sit this fraction of the panel size in from each edge
    inset_x: float = 0.06
    inset_y: float = 0.085

    def __post_init__(self):
        if not (0 < self.inset_x < 0.5 and 0 < self.inset_y < 0.5):
            raise ValueError("insets must lie in (0, 0.5)")

    def points(self) -> np.ndarray:
        cx, cy = self.screen_w_px / 2, self.screen_h_px / 2
        dx = cx - self.inset_x * self.screen_w_px
        dy = cy - self.inset_y * self.screen_h_px
        unit = [(0, 0), (0, -1), (0, 1), (-1, 0), (1, 0), (-1, -1), (1, -1), (-1, 1), (1, 1),
                (-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)]
        return np.array([(cx + ux * dx, cy + uy * dy) for ux, uy in unit])

    @staticmethod
    def outer_layout() -> dict[int, tuple[int, int]]:
        """Point id -> (row, column) of the outer 3x3 arrangement; 0 = up/left."""
        return {5: (0, 0), 1: (0, 1), 6: (0, 2), 3: (1, 0), 0: (1, 1), 4: (1, 2), 7: (2, 0), 2: (2, 1), 8: (2, 2)}


def _design(u, v):
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    return np.stack([np.ones_like(u), u, v, u * u, u * v, v * v], axis=-1)


@dataclass(frozen=True)
class CalibrationMap:
    """Per-axis quadratic map from the P-CR vector (image px) to screen px.

    The polynomials predict the horizontal and vertical components of the
    unit gaze vector; the screen position follows from intersecting that ray
    with the panel.  P-CR moves close to linearly with these components, so
    the quadratic absorbs the remaining camera perspective rather than the
    tangent of the screen projection.
    """

    coef_x: tuple[float, ...]
    coef_y: tuple[float, ...]
    # the P-CR vector is centred and scaled before the polynomial is applied
    offset: tuple[float, float]
    scale: float
    geometry: ViewingGeometry = ViewingGeometry()
    residuals_deg: tuple[float, ...] = ()

    def components(self, dx, dy):
        a = _design((np.asarray(dx, float) - self.offset[0]) / self.scale,
                    (np.asarray(dy, float) - self.offset[1]) / self.scale)
        return a @ np.asarray(self.coef_x), a @ np.asarray(self.coef_y)

    def __call__(self, dx, dy):
        gx, gy = self.components(dx, dy)
        with np.errstate(invalid="ignore"):
            gz = np.sqrt(1.0 - gx * gx - gy * gy)
        yaw, pitch = fick_angles(np.stack(np.broadcast_arrays(gx, gy, gz), axis=-1))
        return gaze_to_screen_px(yaw, pitch, self.geometry)

    def to_dict(self) -> dict:
        return {"coef_x": list(self.coef_x), "coef_y": list(self.coef_y), "offset": list(self.offset),
                "scale": self.scale, "geometry": asdict(self.geometry), "residuals_deg": list(self.residuals_deg)}

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationMap":
        return cls(tuple(d["coef_x"]), tuple(d["coef_y"]), tuple(d["offset"]), float(d["scale"]),
                   ViewingGeometry(**d["geometry"]), tuple(d.get("residuals_deg", ())))


def calibrate(observed, truth_px, geom: ViewingGeometry, tolerance_deg: float = CALIBRATION_TOLERANCE_DEG) -> CalibrationMap:
    """Least-squares quadratic fit of gaze direction on the P-CR vector.

    ``observed`` is (n, 2) P-CR vectors, NaN rows marking failed points;
    ``truth_px`` is the matching (n, 2) screen positions.  Residuals are the
    angles between fitted and true gaze rays.
    """
    obs = np.asarray(observed, float)
    truth = np.asarray(truth_px, float)
    if obs.shape != truth.shape or obs.ndim != 2 or obs.shape[1] != 2:
        raise ValueError("observed and truth must both be (n, 2)")
    bad = ~np.isfinite(obs).all(axis=1)
    if bad.any():
        raise CalibrationFailed(int(np.argmax(bad)), math.nan)
    if len(obs) < 6:
        raise ValueError("a quadratic map needs at least 6 points")
    offset = obs.mean(axis=0)
    scale = float(np.abs(obs - offset).max()) or 1.0
    a = _design((obs[:, 0] - offset[0]) / scale, (obs[:, 1] - offset[1]) / scale)
    rays = geom.px_to_rays(truth[:, 0], truth[:, 1])
    coef, *_ = np.linalg.lstsq(a, rays[:, :2], rcond=None)
    cal = CalibrationMap(tuple(float(c) for c in coef[:, 0]), tuple(float(c) for c in coef[:, 1]),
                         (float(offset[0]), float(offset[1])), scale, geom)
    fx, fy = cal(obs[:, 0], obs[:, 1])
    resid = np.degrees(angle_between(geom.px_to_rays(fx, fy), rays))
    resid = np.where(np.isfinite(resid), resid, np.inf)
    cal = replace(cal, residuals_deg=tuple(float(r) for r in resid))
    worst = int(np.argmax(resid))
    if resid[worst] > tolerance_deg:
        raise CalibrationFailed(worst, float(resid[worst]))
    return cal


def gimbal_target(x_px: float, y_px: float, geom: ViewingGeometry) -> GimbalState:
    """Nearest micro-step pose that looks at a screen pixel."""
    yaw, pitch = screen_px_to_angles(x_px, y_px, geom)
    return GimbalState(int(round(deg_to_steps(math.degrees(float(yaw))))), int(round(deg_to_steps(math.degrees(float(pitch))))))


# -- timelines and sampling ------------------------------------------------------


@dataclass
class Timeline:
    """Gimbal pose at every 1 ms tick, stored as distinct poses plus an index.

    ``blocks`` lists ``(kind, first_tick, n_ticks, target)`` with kind
    ``"move"`` or ``"dwell"``; ``target`` indexes the landing list.
    """

    yaw_deg: np.ndarray
    pitch_deg: np.ndarray
    pose_index: np.ndarray
    blocks: list = field(default_factory=list)
    markers: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pose_index)

    def gaze_deg(self) -> tuple[np.ndarray, np.ndarray]:
        return self.yaw_deg[self.pose_index], self.pitch_deg[self.pose_index]


def build_timeline(
    start: GimbalState,
    landings: Sequence[GimbalState],
    dwell_ms: int | Sequence[int] = 300,
    profile: MotionProfile | None = None,
    labels: Iterable[str] | None = None,
    initial_dwell_ms: int = 0,
    fixation_markers: bool = False,
) -> Timeline:
    """Move through ``landings`` with a dwell after each arrival.

    A move of duration T occupies ``ceil(T)`` ticks sampled from the start of
    the move, so the first dwell tick is the first at rest.  Labels are logged
    at move start; with ``fixation_markers`` each dwell is also bracketed by
    ``FIX_START label`` and ``FIX_END label`` on its first and last tick.
    """
    profile = profile or MotionProfile()
    dwells = [int(dwell_ms)] * len(landings) if np.ndim(dwell_ms) == 0 else [int(d) for d in dwell_ms]
    if len(dwells) != len(landings):
        raise ValueError("one dwell time per landing expected")
    labels = list(labels) if labels is not None else [None] * len(landings)
    yaws, pitches, index, blocks, markers = [], [], [], [], []
    tick = 0

    def dwell(state, n, target):
        nonlocal tick
        if n <= 0:
            return
        yaws.append(np.array([state.x_steps * DEG_PER_MICROSTEP]))
        pitches.append(np.array([state.y_steps * DEG_PER_MICROSTEP]))
        base = sum(len(y) for y in yaws) - 1
        index.append(np.full(n, base, dtype=np.int64))
        blocks.append(("dwell", tick, n, target))
        tick += n

    dwell(start, initial_dwell_ms, -1)
    cur = start
    for i, (land, label, dwell_i) in enumerate(zip(landings, labels, dwells)):
        if label is not None:
            markers.append((tick, label))
        traj = plan_move(cur, land, profile)
        n = int(math.ceil(round(traj.duration * 1000.0, 9)))
        if n > 0:
            x, y = sample_trajectory(traj, np.arange(n) / 1000.0)
            base = sum(len(v) for v in yaws)
            yaws.append(np.asarray(x, float))
            pitches.append(np.asarray(y, float))
            index.append(np.arange(base, base + n, dtype=np.int64))
            blocks.append(("move", tick, n, i))
            tick += n
        if fixation_markers and label is not None and dwell_i > 0:
            markers.append((tick, f"FIX_START {label}"))
            markers.append((tick + dwell_i - 1, f"FIX_END {label}"))
        dwell(land, dwell_i, i)
        cur = land
    if not index:
        empty = np.zeros(0)
        return Timeline(empty, empty, np.zeros(0, dtype=np.int64), blocks, markers)
    return Timeline(np.concatenate(yaws), np.concatenate(pitches), np.concatenate(index), blocks, markers)


@dataclass
class SampleStream:
    """1 kHz samples; invalid samples carry NaN gaze and pupil values."""

    t_ms: np.ndarray
    x: np.ndarray
    y: np.ndarray
    pupil: np.ndarray
    valid: np.ndarray
    markers: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.t_ms)

    def slice(self, start: int, stop: int) -> "SampleStream":
        """Samples with index in [start, stop)."""
        sl = np.s_[start:stop]
        return SampleStream(self.t_ms[sl], self.x[sl], self.y[sl], self.pupil[sl], self.valid[sl])


def pose_features(yaw_deg, pitch_deg, eye: EyeModel, cam: CameraModel) -> dict:
    return feature_arrays(np.radians(yaw_deg), np.radians(pitch_deg), eye, cam)


def _rois(f: dict, cam: CameraModel, margin: int) -> np.ndarray:
    """Windows that contain every pixel that could pass either threshold."""
    half = np.nan_to_num(0.5 * f["major"], nan=0.0)
    pu = np.nan_to_num(f["pupil_u"], nan=0.0)
    pv = np.nan_to_num(f["pupil_v"], nan=0.0)
    ok = f["pupil_ok"]
    cok = f["cr_ok"]
    r = cam.cr_radius_px
    big = 1e9
    x0 = np.minimum(np.where(ok, pu - half, big), np.where(cok, f["cr_u"] - r, big))
    x1 = np.maximum(np.where(ok, pu + half, -big), np.where(cok, f["cr_u"] + r, -big))
    y0 = np.minimum(np.where(ok, pv - half, big), np.where(cok, f["cr_v"] - r, big))
    y1 = np.maximum(np.where(ok, pv + half, -big), np.where(cok, f["cr_v"] + r, -big))
    none = ~(ok | cok)
    x0 = np.clip(np.floor(np.where(none, 0, x0)) - margin, 0, cam.image_w_px - 1)
    y0 = np.clip(np.floor(np.where(none, 0, y0)) - margin, 0, cam.image_h_px - 1)
    x1 = np.clip(np.ceil(np.where(none, 0, x1)) + margin, 0, cam.image_w_px - 1)
    y1 = np.clip(np.ceil(np.where(none, 0, y1)) + margin, 0, cam.image_h_px - 1)
    return np.stack([x0, y0, x1 - x0 + 1, y1 - y0 + 1], axis=1).astype(np.int64)


def measure(
    yaw_deg,
    pitch_deg,
    eye: EyeModel,
    cam: CameraModel,
    scene: SceneCondition,
    mode: str = "analytic",
    cfg: TrackerConfig | None = None,
    noise_key: int | None = None,
    frames=None,
    pose_index=None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """P-CR vectors (N, 2), pupil size (N,) and validity for a batch of ticks.

    Features are evaluated once per pose; ``pose_index`` maps ticks to poses
    (identity when omitted).  ``frames`` numbers the raster frames for the
    sensor-noise hash.
    """
    cfg = cfg or TrackerConfig()
    yaw_deg = np.atleast_1d(np.asarray(yaw_deg, float))
    pitch_deg = np.atleast_1d(np.asarray(pitch_deg, float))
    idx = np.arange(len(yaw_deg)) if pose_index is None else np.asarray(pose_index, np.int64)
    f = pose_features(yaw_deg, pitch_deg, eye, cam)
    if mode == "analytic":
        ok = (f["pupil_ok"] & f["cr_ok"])[idx]
        pcr = np.stack([f["pupil_u"] - f["cr_u"], f["pupil_v"] - f["cr_v"]], axis=1)[idx]
        size = _size_from_count(f["area"], cfg.pupil_size_mode, cfg.size_scale)[idx]
    elif mode == "raster":
        params = render_params(f, eye, cam, scene)[idx]
        rois = _rois(f, cam, cfg.roi_margin_px)[idx]
        frames = np.arange(len(idx), dtype=np.int64) if frames is None else np.asarray(frames, np.int64)
        sigma = cam.pixel_noise_gray if noise_key is not None else 0.0
        out = _backend.measure_batch(
            params, rois, int(noise_key or 0), frames, float(sigma), float(eye.pupil_gray), float(eye.iris_gray),
            cfg.pupil_threshold, cfg.cr_threshold, cfg.cr_dilate_px, cfg.min_pupil_area_px,
        )
        pcr = out[:, [0, 1]] - out[:, [3, 4]]
        ok = np.isfinite(pcr).all(axis=1)
        size = _size_from_count(out[:, 2], cfg.pupil_size_mode, cfg.size_scale)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    pcr = np.where(ok[:, None], pcr, np.nan)
    size = np.where(ok, size, np.nan)
    return pcr, size, ok


def calibrate_tracker(
    eye: EyeModel,
    cam: CameraModel,
    geom: ViewingGeometry,
    grid: CalibrationGrid | None = None,
    scene: SceneCondition | None = None,
    mode: str = "analytic",
    cfg: TrackerConfig | None = None,
    noise_key: int | None = None,
    frames_per_point: int = 20,
) -> CalibrationMap:
    """Look at each grid point and fit the map to the averaged P-CR vectors."""
    grid = grid or CalibrationGrid(geom.screen_w_px, geom.screen_h_px)
    scene = scene or SceneCondition()
    pts = grid.points()
    states = [gimbal_target(x, y, geom) for x, y in pts]
    yaw = np.array([s.x_steps for s in states]) * DEG_PER_MICROSTEP
    pitch = np.array([s.y_steps for s in states]) * DEG_PER_MICROSTEP
    n = frames_per_point if mode == "raster" else 1
    idx = np.repeat(np.arange(len(pts)), n)
    pcr, _, ok = measure(yaw, pitch, eye, cam, scene, mode, cfg, noise_key, np.arange(len(idx)), idx)
    obs = np.full((len(pts), 2), np.nan)
    for i in range(len(pts)):
        sel = idx == i
        if ok[sel].all():
            obs[i] = pcr[sel].mean(axis=0)
    return calibrate(obs, pts, geom)


def run_tracker(
    timeline: Timeline,
    eye: EyeModel,
    cam: CameraModel,
    scene: SceneCondition,
    cal: CalibrationMap,
    mode: str = "analytic",
    cfg: TrackerConfig | None = None,
    noise_key: int | None = None,
    t0_ms: int = 0,
) -> SampleStream:
    """One sample per tick; lost features give invalid samples, never errors."""
    n = len(timeline)
    t = t0_ms + np.arange(n, dtype=np.int64)
    if n == 0:
        empty = np.zeros(0)
        return SampleStream(t, empty, empty, empty, np.zeros(0, bool), list(timeline.markers))
    pcr, size, ok = measure(timeline.yaw_deg, timeline.pitch_deg, eye, cam, scene, mode, cfg, noise_key,
                            np.arange(n, dtype=np.int64), timeline.pose_index)
    x, y = cal(pcr[:, 0], pcr[:, 1])
    ok = ok & np.isfinite(x) & np.isfinite(y)
    nan = np.nan
    markers = [(t0_ms + tick, msg) for tick, msg in timeline.markers]
    return SampleStream(t, np.where(ok, x, nan), np.where(ok, y, nan), np.where(ok, size, nan), ok, markers)


# -- ASC-like sample log -----------------------------------------------------------


def write_samples(fh, s: SampleStream, header: Sequence[str] = ()) -> None:
    """Tab-separated samples, ``.`` for missing values, ``MSG`` marker lines."""
    for line in header:
        fh.write(f"MSG\t{int(s.t_ms[0]) if len(s) else 0}\t{line}\n")
    marks = sorted(s.markers)
    m = 0
    t_list = s.t_ms.tolist()
    xs, ys, ps, vs = s.x.tolist(), s.y.tolist(), s.pupil.tolist(), s.valid.tolist()
    out = []
    for i, t in enumerate(t_list):
        while m < len(marks) and marks[m][0] <= t:
            out.append(f"MSG\t{marks[m][0]}\t{marks[m][1]}")
            m += 1
        if vs[i]:
            out.append(f"{t}\t{xs[i]:.2f}\t{ys[i]:.2f}\t{ps[i]:.1f}")
        else:
            out.append(f"{t}\t.\t.\t.")
    for tm, msg in marks[m:]:
        out.append(f"MSG\t{tm}\t{msg}")
    if out:
        fh.write("\n".join(out) + "\n")


def read_samples(fh) -> SampleStream:
    t, x, y, p, markers = [], [], [], [], []
    for line in fh:
        parts = line.rstrip("\n").split("\t")
        if parts[0] == "MSG":
            markers.append((int(parts[1]), parts[2]))
            continue
        t.append(int(parts[0]))
        x.append(math.nan if parts[1] == "." else float(parts[1]))
        y.append(math.nan if parts[2] == "." else float(parts[2]))
        p.append(math.nan if parts[3] == "." else float(parts[3]))
    x_arr = np.array(x, float)
    return SampleStream(np.array(t, np.int64), x_arr, np.array(y, float), np.array(p, float), np.isfinite(x_arr), markers)
