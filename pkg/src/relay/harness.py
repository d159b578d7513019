"""Experiment orchestration: configuration, targets, runs, patterns and persistence.

Every random draw is taken from a stream keyed by the root seed plus the
purpose and the work unit, so a participant x condition cell can be
simulated alone, in any order or in another process and still produce the
same bytes.

A run directory holds ``manifest.json``, the resolved ``config.json``, the
``calibration.json`` map and the run's data files.  Analysis only reads those
files, which keeps in-memory and on-disk results identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
import types
import typing
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as keyed
from .events import (
    EVENT_FIELDS,
    OUT_OF_RANGE,
    RETAINED,
    SPLIT_FRAGMENT,
    DetectorConfig,
    SaccadeEvent,
    classify_saccades,
    detect_saccades,
    event_row,
    read_events,
    write_events,
)
from .geometry import (
    DEG_PER_MICROSTEP,
    GazeDirection,
    LaserRig,
    ViewingGeometry,
    angle_between,
    fick_angles,
    gaze_to_screen_px,
    gaze_vectors,
    reflect_laser,
)
from .motion import GimbalState, MotionProfile, PositioningNoise, apply_positioning_noise, plan_move, sample_trajectory
from .optics import DEFAULT_CONDITIONS, CameraModel, EyeModel, SceneCondition
from .stats import (
    DegenerateFit,
    accuracy_table,
    fit_main_sequence,
    precision_table,
    pupil_direction_bias,
    rm_anova,
)
from .tracker import (
    CalibrationGrid,
    CalibrationMap,
    SampleStream,
    TrackerConfig,
    build_timeline,
    calibrate_tracker,
    gimbal_target,
    read_samples,
    run_tracker,
    write_samples,
)

MODES = ("analytic", "raster")
ANOVA_LEVELS = ("participant", "saccade")
PATTERNS = ("h_line", "v_line", "multi_h", "multi_v", "cross", "grid13", "random160")


class ConfigError(ValueError):
    """Invalid or unknown configuration entries."""


class InfeasibleStep(RuntimeError):
    """No in-bounds target satisfies the amplitude constraint."""


class RunNotFound(ValueError):
    pass


# -- configuration ------------------------------------------------------------------------


@dataclass(frozen=True)
class AnalysisConfig:
    exclusion_range_deg: tuple[float, float] = (4.0, 14.6)
    split_gap_ms: int = 40
    # rows of the rm ANOVA matrix: participant means, or single saccades matched by trial
    anova_level: str = "participant"

    def __post_init__(self):
        lo, hi = self.exclusion_range_deg
        if not 0 <= lo < hi:
            raise ValueError("exclusion range must satisfy 0 <= lo < hi")
        if self.split_gap_ms < 0:
            raise ValueError("split_gap_ms must be >= 0")
        if self.anova_level not in ANOVA_LEVELS:
            raise ValueError(f"anova_level must be one of {ANOVA_LEVELS}")


@dataclass(frozen=True)
class ExperimentConfig:
    participants: int = 200
    saccades_per_condition: int = 200
    conditions: tuple[SceneCondition, ...] = DEFAULT_CONDITIONS
    fixation_ms: int = 300
    amplitude_range_deg: tuple[float, float] = (4.5, 14.1)
    overshoot_margin_fraction: float = 0.10
    seed: int = 0
    mode: str = "analytic"
    calibration_condition: str = "medium"
    calibration_frames: int = 20
    write_samples: bool = True
    workers: int = 1
    geometry: ViewingGeometry = ViewingGeometry()
    eye: EyeModel = EyeModel()
    camera: CameraModel = CameraModel()
    motion: MotionProfile = MotionProfile()
    positioning_noise: PositioningNoise = PositioningNoise()
    tracker: TrackerConfig = TrackerConfig()
    detector: DetectorConfig = DetectorConfig()
    grid: CalibrationGrid = CalibrationGrid()
    laser: LaserRig = LaserRig()
    analysis: AnalysisConfig = AnalysisConfig()

    def __post_init__(self):
        if self.participants < 1 or self.saccades_per_condition < 1:
            raise ValueError("participants and saccades_per_condition must be >= 1")
        if not self.conditions:
            raise ValueError("conditions must not be empty")
        names = [c.name for c in self.conditions]
        if len(set(names)) != len(names):
            raise ValueError("condition names must be unique")
        if self.calibration_condition not in names:
            raise ValueError(f"calibration_condition {self.calibration_condition!r} is not a condition")
        if self.fixation_ms < 1 or self.calibration_frames < 1 or self.workers < 1:
            raise ValueError("fixation_ms, calibration_frames and workers must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 0 <= self.overshoot_margin_fraction < 1:
            raise ValueError("overshoot_margin_fraction must lie in [0, 1)")
        if (self.grid.screen_w_px, self.grid.screen_h_px) != (self.geometry.screen_w_px, self.geometry.screen_h_px):
            raise ValueError("grid and geometry disagree on the screen size")
        lo, hi = self.amplitude_range_deg
        if not 0 < lo < hi:
            raise ValueError("amplitude range must satisfy 0 < lo < hi")
        x0, y0, x1, y1 = margin_box(self)
        corners = self.geometry.px_to_rays(np.array([x0, x1]), np.array([y0, y1]))
        span = math.degrees(float(angle_between(corners[0], corners[1])))
        if hi > span:
            raise ValueError(f"amplitude {hi} deg exceeds the {span:.1f} deg diagonal of the margin screen")

    def session_noise(self) -> PositioningNoise:
        """Positioning noise whose per-position errors are tied to the root seed."""
        return replace(self.positioning_noise,
                       stream=keyed.counter_key(self.seed, "position", self.positioning_noise.stream))

    def scene(self, name: str) -> SceneCondition:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)


def _convert(tp, value, path: str):
    if is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object")
        hints = typing.get_type_hints(tp)
        names = [f.name for f in fields(tp) if f.init]
        unknown = sorted(set(value) - set(names))
        if unknown:
            raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")
        kwargs = {k: _convert(hints[k], value[k], f"{path}.{k}") for k in names if k in value}
        try:
            return tp(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, path)
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{path}: expected {len(args)} values")
        return tuple(_convert(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    raise ConfigError(f"{path}: unsupported type {tp}")


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build a config from JSON data; missing keys take defaults, unknown keys fail."""
    return _convert(ExperimentConfig, data, "config")


def config_to_dict(obj) -> dict:
    if is_dataclass(obj):
        return {f.name: config_to_dict(getattr(obj, f.name)) for f in fields(obj) if f.init}
    if isinstance(obj, (tuple, list)):
        return [config_to_dict(v) for v in obj]
    return obj


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, allow_nan=False) + "\n")


# -- targets ---------------------------------------------------------------------------------


def margin_box(cfg: ExperimentConfig) -> tuple[float, float, float, float]:
    """Screen rectangle (x0, y0, x1, y1) shrunk by the overshoot margin.

    The margin removes that fraction of the usable range, half on each side.
    """
    g = cfg.geometry
    f = cfg.overshoot_margin_fraction / 2.0
    return f * g.screen_w_px, f * g.screen_h_px, (1.0 - f) * g.screen_w_px, (1.0 - f) * g.screen_h_px


def _steps_px(steps: np.ndarray, geom: ViewingGeometry) -> np.ndarray:
    rad = np.radians(np.asarray(steps, float) * DEG_PER_MICROSTEP)
    x, y = gaze_to_screen_px(rad[..., 0], rad[..., 1], geom)
    return np.stack([x, y], axis=-1)


def _steps_rays(steps: np.ndarray) -> np.ndarray:
    rad = np.radians(np.asarray(steps, float) * DEG_PER_MICROSTEP)
    return gaze_vectors(rad[..., 0], rad[..., 1])


def _random_walk(rng: np.random.Generator, n: int, cfg: ExperimentConfig, batch: int = 64, tries: int = 20) -> np.ndarray:
    """(n, 2) micro-step targets; consecutive rays subtend the amplitude range."""
    x0, y0, x1, y1 = margin_box(cfg)
    lo, hi = cfg.amplitude_range_deg
    geom = cfg.geometry

    def quantize(rays):
        yaw, pitch = fick_angles(rays)
        return np.rint(np.degrees(np.stack([yaw, pitch], axis=-1)) / DEG_PER_MICROSTEP)

    def inside(px):
        return (px[:, 0] >= x0) & (px[:, 0] <= x1) & (px[:, 1] >= y0) & (px[:, 1] <= y1)

    out = np.zeros((n, 2))
    for _ in range(tries):
        px = np.column_stack([rng.uniform(x0, x1, batch), rng.uniform(y0, y1, batch)])
        cand = quantize(geom.px_to_rays(px[:, 0], px[:, 1]))
        ok = np.flatnonzero(inside(_steps_px(cand, geom)))
        if len(ok):
            out[0] = cand[ok[0]]
            break
    else:
        raise InfeasibleStep("no start point inside the margin screen")
    # area-uniform over the annulus on the sphere: cos(amplitude) is uniform
    c_lo, c_hi = math.cos(math.radians(hi)), math.cos(math.radians(lo))
    for i in range(1, n):
        r = _steps_rays(out[i - 1])
        e1 = np.cross(r, [0.0, 1.0, 0.0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(r, e1)
        for _ in range(tries):
            ca = rng.uniform(c_lo, c_hi, batch)
            phi = rng.uniform(0.0, 2.0 * math.pi, batch)
            sa = np.sqrt(1.0 - ca * ca)
            rays = ca[:, None] * r + sa[:, None] * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)
            cand = quantize(rays)
            amp = np.degrees(angle_between(_steps_rays(cand), r))
            ok = np.flatnonzero(inside(_steps_px(cand, geom)) & (amp >= lo) & (amp <= hi))
            if len(ok):
                out[i] = cand[ok[0]]
                break
        else:
            raise InfeasibleStep(f"no feasible target after point {i - 1}")
    return out


def gen_target_steps(participant: int, cfg: ExperimentConfig) -> np.ndarray:
    """(S + 1, 2) micro-step targets of one participant; shared by all conditions."""
    rng = keyed.stream(cfg.seed, "targets", participant)
    return _random_walk(rng, cfg.saccades_per_condition + 1, cfg)


def gen_targets(participant: int, cfg: ExperimentConfig) -> np.ndarray:
    """(S + 1, 2) screen pixels of a participant's targets.

    Targets are snapped to the micro-step grid before the amplitude and margin
    checks, so the checks hold for the positions the gimbal is commanded to.
    """
    return _steps_px(gen_target_steps(participant, cfg), cfg.geometry)


def _states(steps: np.ndarray) -> list[GimbalState]:
    return [GimbalState(int(x), int(y)) for x, y in steps]


def participant_landings(participant: int, condition: str, cfg: ExperimentConfig) -> list[GimbalState]:
    """Realised landing positions of one participant in one condition."""
    noise = cfg.session_noise()
    rng = keyed.stream(cfg.seed, "landing", participant, condition) if noise.scope == "move" else None
    return [apply_positioning_noise(t, noise, rng) for t in _states(gen_target_steps(participant, cfg))]


def cell_start(participant: int, condition: str, cfg: ExperimentConfig) -> GimbalState:
    """Where a cell starts: the previous participant's last landing (neutral for the first)."""
    if participant == 0:
        return GimbalState(0, 0)
    return participant_landings(participant - 1, condition, cfg)[-1]


# -- artificial-saccade experiment -------------------------------------------------------------


@dataclass
class CellResult:
    participant: int
    condition: str
    events: list[SaccadeEvent] = field(default_factory=list)
    trials: list[int] = field(default_factory=list)
    statuses: list[str] = field(default_factory=list)
    n_commanded: int = 0
    error: str | None = None
    samples: SampleStream | None = None

    def rows(self) -> list[list[str]]:
        return [event_row(ev, t, self.participant, self.condition, s)
                for ev, t, s in zip(self.events, self.trials, self.statuses)]


def _noise_key(cfg: ExperimentConfig, *keys) -> int | None:
    return keyed.counter_key(cfg.seed, "pixels", *keys) if cfg.mode == "raster" else None


def calibrate_run(cfg: ExperimentConfig) -> CalibrationMap:
    return calibrate_tracker(cfg.eye, cfg.camera, cfg.geometry, cfg.grid, cfg.scene(cfg.calibration_condition),
                             cfg.mode, cfg.tracker, _noise_key(cfg, "calibration"), cfg.calibration_frames)


def assign_trials(events: Sequence[SaccadeEvent], blocks: Sequence[tuple], lead_ms: int = 5) -> list[int]:
    """Trial (landing index) of the move each event belongs to; -1 before the first move.

    ``lead_ms`` absorbs the velocity filter, which can flag a move a couple
    of samples before it starts.
    """
    moves = [(b[1], b[3]) for b in blocks if b[0] == "move"]
    starts = np.array([m[0] for m in moves], np.int64)
    out = []
    for ev in events:
        j = int(np.searchsorted(starts, ev.t_start_ms + lead_ms, side="right")) - 1
        out.append(int(moves[j][1]) if j >= 0 else -1)
    return out


def simulate_cell(
    cfg: ExperimentConfig, cal: CalibrationMap, participant: int, condition: str,
    log_path: Path | None = None, keep_samples: bool = False,
) -> CellResult:
    """Record one participant in one condition and run the event pipeline."""
    res = CellResult(participant, condition, n_commanded=cfg.saccades_per_condition)
    try:
        landings = participant_landings(participant, condition, cfg)
        start = cell_start(participant, condition, cfg)
        labels = [f"TRIALID {i}" for i in range(len(landings))]
        tl = build_timeline(start, landings, cfg.fixation_ms, cfg.motion, labels, initial_dwell_ms=cfg.fixation_ms)
        s = run_tracker(tl, cfg.eye, cfg.camera, cfg.scene(condition), cal, cfg.mode, cfg.tracker,
                        _noise_key(cfg, participant, condition))
        res.events, _ = detect_saccades(s, cfg.geometry, cfg.detector)
        lo, hi = cfg.analysis.exclusion_range_deg
        res.statuses = classify_saccades(res.events, lo, hi, cfg.analysis.split_gap_ms)
        res.trials = assign_trials(res.events, tl.blocks)
        if log_path is not None:
            with open(log_path, "w", newline="\n") as fh:
                write_samples(fh, s, [f"PARTICIPANT {participant}", f"CONDITION {condition}"])
        if keep_samples:
            res.samples = s
    except (ValueError, RuntimeError) as exc:
        res.events, res.statuses, res.trials = [], [], []
        res.error = f"{type(exc).__name__}: {exc}"
    return res


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    calibration: CalibrationMap
    cells: list[CellResult]

    def event_rows(self) -> list[list[str]]:
        return [row for c in self.cells for row in c.rows()]

    def events_csv(self) -> str:
        buf = io.StringIO()
        write_events(buf, self.event_rows())
        return buf.getvalue()

    def failures(self) -> dict[str, str]:
        return {f"{c.participant}/{c.condition}": c.error for c in self.cells if c.error}


def _cell_job(args):
    cfg, cal, p, cond, log_path, keep = args
    return simulate_cell(cfg, cal, p, cond, log_path, keep)


def run_saccade_experiment(
    cfg: ExperimentConfig, out_dir=None, cal: CalibrationMap | None = None, keep_samples: bool = False
) -> ExperimentResult:
    """All participant x condition cells, in condition-major order.

    With ``out_dir`` the run directory is written as cells finish (sample
    logs only when ``cfg.write_samples``).  ``cal`` skips the calibration.
    """
    cal = cal or calibrate_run(cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None and cfg.write_samples:
        (out / "samples").mkdir(parents=True, exist_ok=True)
    jobs = []
    for cond in cfg.conditions:
        for p in range(cfg.participants):
            log = out / "samples" / f"p{p:03d}_{cond.name}.asc" if out is not None and cfg.write_samples else None
            jobs.append((cfg, cal, p, cond.name, log, keep_samples))
    if cfg.workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(cfg.workers) as pool:
            cells = list(pool.map(_cell_job, jobs, chunksize=4))
    else:
        cells = [_cell_job(j) for j in jobs]
    result = ExperimentResult(cfg, cal, cells)
    if out is not None:
        write_experiment(result, out)
    return result


def write_experiment(result: ExperimentResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    _dump_json(out / "config.json", config_to_dict(cfg))
    _dump_json(out / "calibration.json", result.calibration.to_dict())
    (out / "events.csv").write_text(result.events_csv())
    rows = parse_event_rows(result.event_rows())
    summary = exclusion_summary(rows, cfg.analysis.exclusion_range_deg)
    summary["commanded"] = sum(c.n_commanded for c in result.cells)
    summary["failures"] = result.failures()
    _dump_json(out / "summary.json", summary)
    _dump_json(out / "manifest.json", {
        "kind": "experiment", "participants": cfg.participants, "saccades_per_condition": cfg.saccades_per_condition,
        "conditions": [c.name for c in cfg.conditions], "mode": cfg.mode, "seed": cfg.seed,
    })


# -- analysis of event tables ----------------------------------------------------------------------


def parse_event_rows(rows: Sequence[Sequence[str]]) -> list[dict]:
    """Parse formatted rows exactly as they would be read back from ``events.csv``."""
    buf = io.StringIO()
    write_events(buf, rows)
    buf.seek(0)
    return read_events(buf)


def exclusion_summary(rows: Sequence[dict], exclusion_range_deg=(4.0, 14.6)) -> dict:
    lo, hi = exclusion_range_deg
    status = [r["status"] for r in rows]
    retained = [r for r in rows if r["status"] == RETAINED]
    detected = len(rows)
    return {
        "detected": detected,
        "retained": len(retained),
        "excluded": {OUT_OF_RANGE: status.count(OUT_OF_RANGE), SPLIT_FRAGMENT: status.count(SPLIT_FRAGMENT)},
        "retained_fraction": len(retained) / detected if detected else math.nan,
        "retained_outside_range": sum(1 for r in retained if not lo <= r["amplitude_deg"] <= hi),
    }


def condition_matrices(rows: Sequence[dict], participants: int, conditions: Sequence[str], level: str = "participant"):
    """(subjects, k) matrices of mean peak velocity and mean pupil size from retained saccades.

    ``level="participant"`` averages each participant's saccades per
    condition and drops participants with an empty cell.  ``"saccade"`` uses
    one row per (participant, trial) retained in every condition.
    Returns ``(pv, pupil, row_keys)``.
    """
    cidx = {c: i for i, c in enumerate(conditions)}
    k = len(conditions)
    if level == "participant":
        groups: dict[tuple, list] = {}
        for r in rows:
            if r["status"] == RETAINED and r["condition"] in cidx:
                groups.setdefault((r["participant"], cidx[r["condition"]]), []).append(r)
        keys = [p for p in range(participants) if all((p, j) in groups for j in range(k))]
        pv = np.array([[np.mean([r["peak_velocity_degps"] for r in groups[(p, j)]]) for j in range(k)] for p in keys])
        pup = np.array([[np.nanmean([r["mean_pupil_size"] for r in groups[(p, j)]]) for j in range(k)] for p in keys])
    elif level == "saccade":
        cells: dict[tuple, dict] = {}
        for r in rows:
            if r["status"] == RETAINED and r["condition"] in cidx:
                # a split-free trial has one retained saccade; keep the first if not
                cells.setdefault((r["participant"], r["trial"]), {}).setdefault(cidx[r["condition"]], r)
        keys = sorted(key for key, v in cells.items() if len(v) == k)
        pv = np.array([[cells[key][j]["peak_velocity_degps"] for j in range(k)] for key in keys])
        pup = np.array([[cells[key][j]["mean_pupil_size"] for j in range(k)] for key in keys])
    else:
        raise ValueError(f"unknown aggregation level {level!r}")
    return pv.reshape(-1, k), pup.reshape(-1, k), keys


def _metric_report(m: np.ndarray, conditions: Sequence[str]) -> dict:
    means = m.mean(axis=0) if len(m) else np.full(len(conditions), math.nan)
    rep = {
        "condition_means": {c: float(v) for c, v in zip(conditions, means)},
        "max_relative_difference": float((means.max() - means.min()) / means.mean()) if len(m) else math.nan,
    }
    try:
        rep["rm_anova"] = rm_anova(m).to_dict()
    except ValueError as exc:
        rep["rm_anova"] = None
        rep["error"] = str(exc)
    return rep


def experiment_report(rows: Sequence[dict], participants: int, conditions: Sequence[str],
                      analysis: AnalysisConfig = AnalysisConfig()) -> dict:
    pv, pup, keys = condition_matrices(rows, participants, conditions, analysis.anova_level)
    rep = {
        "aggregation": analysis.anova_level,
        "conditions": list(conditions),
        "subjects": len(keys),
        "peak_velocity": _metric_report(pv, conditions),
        "pupil_size": _metric_report(pup, conditions),
        "exclusion": exclusion_summary(rows, analysis.exclusion_range_deg),
    }
    if analysis.anova_level == "participant":
        rep["excluded_participants"] = [p for p in range(participants) if p not in set(keys)]
    return _clean(rep)


def main_sequence_rows(rows: Sequence[dict], conditions: Sequence[str]) -> list[dict]:
    out = []
    for name in (*conditions, "all"):
        sel = [r for r in rows if r["status"] == RETAINED and (name == "all" or r["condition"] == name)]
        try:
            fit = fit_main_sequence([r["amplitude_deg"] for r in sel], [r["peak_velocity_degps"] for r in sel])
            out.append({"condition": name, "n": fit.n, "slope": fit.slope, "intercept": fit.intercept,
                        "pv_at_10deg": fit.pv_at_10deg, "r2": fit.r2})
        except DegenerateFit:
            out.append({"condition": name, "n": len(sel), "slope": math.nan, "intercept": math.nan,
                        "pv_at_10deg": math.nan, "r2": math.nan})
    return out


# -- pattern library ----------------------------------------------------------------------------

PATTERN_STEP = 8  # micro-steps between neighbouring pattern vertices (0.9 deg)


@dataclass(frozen=True)
class PatternSpec:
    name: str
    points: tuple[GimbalState, ...]
    dwell_ms: tuple[int, ...]
    # intended screen position of each point; NaN when it is off the panel
    planned_px: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.points:
            raise ValueError("a pattern needs at least one point")
        if not len(self.points) == len(self.dwell_ms) == len(self.planned_px):
            raise ValueError("points, dwell_ms and planned_px must have equal lengths")
        if any(d < 0 for d in self.dwell_ms):
            raise ValueError("dwell times must be >= 0")
        for p in self.points:
            if not isinstance(p, GimbalState):
                raise TypeError("pattern points must be GimbalState instances")

    def to_dict(self) -> dict:
        return {"name": self.name,
                "points": [{"x_steps": p.x_steps, "y_steps": p.y_steps, "dwell_ms": d,
                            "planned_px": [None if not math.isfinite(v) else v for v in px]}
                           for p, d, px in zip(self.points, self.dwell_ms, self.planned_px)]}

    @classmethod
    def from_dict(cls, d: dict) -> "PatternSpec":
        pts = d["points"]
        return cls(d["name"], tuple(GimbalState(p["x_steps"], p["y_steps"]) for p in pts),
                   tuple(int(p["dwell_ms"]) for p in pts),
                   tuple(tuple(math.nan if v is None else float(v) for v in p["planned_px"]) for p in pts))


def _line(lo: int, hi: int) -> list[int]:
    return list(range(lo, hi + 1))


def _alternating(k: int) -> list[int]:
    """0, +1, -1, +2, -2, ... +k, -k: saccades that grow by one step each time."""
    return [0] + [s * i for i in range(1, k + 1) for s in (1, -1)]


def _boustrophedon(rows: Sequence[int], cols: Sequence[int], transpose: bool = False) -> list[tuple[int, int]]:
    pts = []
    for i, r in enumerate(rows):
        seq = cols if i % 2 == 0 else list(reversed(cols))
        pts.extend((r, c) if transpose else (c, r) for c in seq)
    return pts


def pattern_vertices(name: str, cfg: ExperimentConfig | None = None) -> list[tuple[int, int]]:
    """Vertices in units of the 8-micro-step pattern spacing (grid13 and random160 excluded)."""
    if name == "h_line":
        return [(i, 0) for i in _alternating(15)]
    if name == "v_line":
        return [(0, i) for i in _alternating(10)]
    if name == "multi_h":
        # five rows 3.6 deg apart, vertices every 2.7 deg
        return _boustrophedon([-8, -4, 0, 4, 8], _line(-15, 15)[::3])
    if name == "multi_v":
        return _boustrophedon([-15, -10, -5, 0, 5, 10, 15], _line(-8, 8)[::2], transpose=True)
    if name == "cross":
        return [(i, i) for i in _line(-9, 9)] + [(i, -i) for i in _line(-9, 9)]
    raise KeyError(name)


def make_pattern(name: str, cfg: ExperimentConfig | None = None, dwell_ms: int | None = None) -> PatternSpec:
    cfg = cfg or ExperimentConfig()
    dwell = cfg.fixation_ms if dwell_ms is None else dwell_ms
    geom = cfg.geometry
    if name == "grid13":
        pts = cfg.grid.points()
        states = [gimbal_target(x, y, geom) for x, y in pts]
        planned = [(float(x), float(y)) for x, y in pts]
    else:
        if name == "random160":
            steps = _random_walk(keyed.stream(cfg.seed, "pattern", name), 161, cfg)
            states = _states(steps)
        elif name in PATTERNS:
            states = [GimbalState(PATTERN_STEP * i, PATTERN_STEP * j) for i, j in pattern_vertices(name, cfg)]
        else:
            raise KeyError(f"unknown pattern {name!r}; choose from {', '.join(PATTERNS)}")
        px = _steps_px(np.array([(s.x_steps, s.y_steps) for s in states]), geom)
        planned = [(float(x), float(y)) if geom.on_screen(x, y) else (math.nan, math.nan) for x, y in px]
    return PatternSpec(name, tuple(states), tuple([dwell] * len(states)), tuple(planned))


# -- precision experiment ---------------------------------------------------------------------------


def fixation_samples(s: SampleStream) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Point id -> ((n, 2) gaze px, (n,) pupil) of the valid samples between FIX markers."""
    opened: dict[int, int] = {}
    out = {}
    for t, msg in s.markers:
        kind, _, label = msg.partition(" ")
        if kind == "FIX_START":
            opened[int(label)] = t
        elif kind == "FIX_END" and int(label) in opened:
            pid = int(label)
            sel = (s.t_ms >= opened.pop(pid)) & (s.t_ms <= t) & s.valid
            out[pid] = (np.column_stack([s.x[sel], s.y[sel]]), s.pupil[sel])
    return out


@dataclass
class PrecisionResult:
    config: ExperimentConfig
    pattern: PatternSpec
    calibration: CalibrationMap
    trials: list[SampleStream]

    def recordings(self) -> tuple[dict[int, list[np.ndarray]], np.ndarray]:
        return pattern_recordings(self.trials, len(self.pattern.points))


def pattern_recordings(trials: Sequence[SampleStream], n_points: int) -> tuple[dict[int, list[np.ndarray]], np.ndarray]:
    """Fixation samples per point and trial, plus the (trials, points) mean pupil sizes."""
    rec: dict[int, list[np.ndarray]] = {i: [] for i in range(n_points)}
    sizes = np.full((len(trials), n_points), np.nan)
    for k, s in enumerate(trials):
        for pid, (xy, pup) in fixation_samples(s).items():
            rec[pid].append(xy)
            if len(pup):
                sizes[k, pid] = pup.mean()
    return {pid: v for pid, v in rec.items() if v}, sizes


def _trial_timeline(pattern: PatternSpec, cfg: ExperimentConfig, trial: int):
    noise = cfg.session_noise()
    rng = keyed.stream(cfg.seed, "landing", pattern.name, trial) if noise.scope == "move" else None
    landings = [apply_positioning_noise(p, noise, rng) for p in pattern.points]
    labels = [str(i) for i in range(len(landings))]
    return build_timeline(GimbalState(0, 0), landings, pattern.dwell_ms, cfg.motion, labels,
                          initial_dwell_ms=cfg.fixation_ms, fixation_markers=True)


def _as_logged(s: SampleStream) -> SampleStream:
    """The stream as it reads back from its sample log (logged precision)."""
    buf = io.StringIO()
    write_samples(buf, s)
    buf.seek(0)
    return read_samples(buf)


def run_precision_experiment(
    pattern: PatternSpec, trials: int = 100, cfg: ExperimentConfig | None = None,
    out_dir=None, cal: CalibrationMap | None = None,
) -> PrecisionResult:
    """Repeat a pattern ``trials`` times from the neutral pose and record every trial.

    Streams are kept at the precision of the sample logs, so analysing the
    result in memory or from its run directory gives the same numbers.
    """
    cfg = cfg or ExperimentConfig()
    if trials < 1:
        raise ValueError("trials must be >= 1")
    cal = cal or calibrate_run(cfg)
    scene = cfg.scene(cfg.calibration_condition)
    streams = []
    for k in range(trials):
        tl = _trial_timeline(pattern, cfg, k)
        s = run_tracker(tl, cfg.eye, cfg.camera, scene, cal, cfg.mode, cfg.tracker,
                        _noise_key(cfg, "pattern", pattern.name, k))
        streams.append(_as_logged(s))
    result = PrecisionResult(cfg, pattern, cal, streams)
    if out_dir is not None:
        write_precision(result, out_dir)
    return result


def write_precision(result: PrecisionResult, out_dir) -> None:
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    _dump_json(out / "config.json", config_to_dict(result.config))
    _dump_json(out / "calibration.json", result.calibration.to_dict())
    _dump_json(out / "pattern.json", result.pattern.to_dict())
    for k, s in enumerate(result.trials):
        with open(out / "samples" / f"trial_{k:03d}.asc", "w", newline="\n") as fh:
            write_samples(fh, s, [f"PATTERN {result.pattern.name}", f"TRIAL {k}"])
    _dump_json(out / "manifest.json", {"kind": "pattern", "pattern": result.pattern.name,
                                       "trials": len(result.trials), "mode": result.config.mode,
                                       "seed": result.config.seed})


def point_table_rows(pattern: PatternSpec, recordings, geom: ViewingGeometry, kind: str) -> list[dict]:
    """Accuracy or precision rows for the points with a planned on-screen position."""
    truth = {i: pattern.planned_px[i] for i in range(len(pattern.points))}
    rec = {pid: v for pid, v in recordings.items() if all(math.isfinite(c) for c in truth[pid])}
    table = accuracy_table(rec, truth, geom) if kind == "accuracy" else precision_table(rec, truth, geom)
    rows = []
    for ps in table:
        row = {"pattern": pattern.name, "point": ps.point_id,
               "planned_x_px": ps.true_px[0], "planned_y_px": ps.true_px[1],
               "measured_x_px": ps.mean_px[0], "measured_y_px": ps.mean_px[1]}
        if kind == "accuracy":
            for unit in ("px", "mm", "deg"):
                v = getattr(ps, f"abs_dev_{unit}")
                row[f"dev_x_{unit}"], row[f"dev_y_{unit}"] = v
        else:
            for unit in ("px", "mm", "deg"):
                v = getattr(ps, f"sd_{unit}")
                row[f"sd_x_{unit}"], row[f"sd_y_{unit}"] = v
        row["n_samples"] = ps.n_samples
        row["n_trials"] = ps.n_trials
        rows.append(row)
    return rows


def bias_report(sizes: np.ndarray) -> dict:
    b = pupil_direction_bias(sizes)
    for part in b.values():
        part["anova"] = part["anova"].to_dict()
    return _clean(b)


# -- laser patterns ------------------------------------------------------------------------------------


@dataclass(frozen=True)
class LaserSpot:
    index: int
    x_steps: int
    y_steps: int
    gaze_deg: float
    reflection_deg: float
    planned_mm: tuple[float, float]
    spot_mm: tuple[float, float] | None
    on_canvas: bool

    @property
    def doubling_error_deg(self) -> float:
        return abs(self.reflection_deg - 2.0 * self.gaze_deg)


def _spot(state: GimbalState, rig: LaserRig):
    yaw, pitch = state.degrees
    g = GazeDirection(yaw, pitch)
    gaze = math.degrees(float(angle_between(g.vector(), np.array([0.0, 0.0, 1.0]))))
    spot, angle = reflect_laser(g, rig)
    return g, gaze, spot, angle


def laser_spots(pattern: PatternSpec, rig: LaserRig | None = None) -> list[LaserSpot]:
    """Simulated spot of every vertex; off-canvas spots are flagged, not dropped.

    The planned position treats each axis separately (``D tan 2 yaw``,
    ``D tan 2 pitch``), the way a flat drawing of the pattern is laid out.
    """
    rig = rig or LaserRig()
    out = []
    for i, st in enumerate(pattern.points):
        g, gaze, spot, angle = _spot(st, rig)
        d = rig.canvas_distance_mm
        planned = (d * math.tan(2.0 * g.yaw), d * math.tan(2.0 * g.pitch))
        on = spot is not None and abs(spot[0]) <= rig.canvas_w_mm / 2 and abs(spot[1]) <= rig.canvas_h_mm / 2
        out.append(LaserSpot(i, st.x_steps, st.y_steps, gaze, angle, planned, spot, on))
    return out


def laser_path(pattern: PatternSpec, rig: LaserRig | None = None, profile: MotionProfile | None = None,
               step_ms: float = 5.0) -> np.ndarray:
    """(n, 2) spot trace of the gimbal moving through the vertices."""
    rig = rig or LaserRig()
    pts = []
    for a, b in zip(pattern.points[:-1], pattern.points[1:]):
        traj = plan_move(a, b, profile)
        t = np.append(np.arange(0.0, traj.duration, step_ms / 1000.0), traj.duration)
        xs, ys = sample_trajectory(traj, t)
        for x, y in zip(np.atleast_1d(xs), np.atleast_1d(ys)):
            g = GazeDirection(float(x) * DEG_PER_MICROSTEP, float(y) * DEG_PER_MICROSTEP)
            spot, _ = reflect_laser(g, rig)
            if spot is not None:
                pts.append(spot)
    return np.array(pts).reshape(-1, 2)


LASER_FIELDS = ("index", "x_steps", "y_steps", "gaze_deg", "reflection_deg", "doubling_error_deg",
                "planned_x_mm", "planned_y_mm", "spot_x_mm", "spot_y_mm", "on_canvas")


def _fmt(v: float, nd: int = 4) -> str:
    return f"{v:.{nd}f}"


def laser_svg(pattern: PatternSpec, spots: Sequence[LaserSpot], path: np.ndarray, rig: LaserRig) -> str:
    """Canvas-scaled overlay: planned pattern in grey, simulated trace and spots in red."""
    w, h = rig.canvas_w_mm, rig.canvas_h_mm
    xs = [abs(s.spot_mm[0]) for s in spots if s.spot_mm] + [abs(s.planned_mm[0]) for s in spots] + [w / 2]
    ys = [abs(s.spot_mm[1]) for s in spots if s.spot_mm] + [abs(s.planned_mm[1]) for s in spots] + [h / 2]
    hx, hy = max(xs) + 20.0, max(ys) + 20.0

    def pt(x, y):
        # canvas y is up, SVG y is down
        return f"{_fmt(x, 3)},{_fmt(-y, 3)}"

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{_fmt(-hx, 3)} {_fmt(-hy, 3)} {_fmt(2 * hx, 3)} '
        f'{_fmt(2 * hy, 3)}" width="{_fmt(2 * hx, 1)}mm" height="{_fmt(2 * hy, 1)}mm">',
        f"<title>{pattern.name}: planned vs simulated laser spots</title>",
        f'<rect x="{_fmt(-w / 2, 3)}" y="{_fmt(-h / 2, 3)}" width="{_fmt(w, 3)}" height="{_fmt(h, 3)}" '
        'fill="white" stroke="black" stroke-width="1"/>',
        '<polyline class="planned" fill="none" stroke="grey" stroke-width="1" stroke-dasharray="4 3" points="'
        + " ".join(pt(*s.planned_mm) for s in spots) + '"/>',
    ]
    if len(path):
        lines.append('<polyline class="simulated" fill="none" stroke="red" stroke-width="1.5" points="'
                     + " ".join(pt(x, y) for x, y in path) + '"/>')
    for s in spots:
        if s.spot_mm is None:
            continue
        x, y = s.spot_mm
        if s.on_canvas:
            lines.append(f'<circle class="spot" cx="{_fmt(x, 3)}" cy="{_fmt(-y, 3)}" r="3" fill="red"/>')
        else:
            c = pt(x, y).split(",")
            cx, cy = float(c[0]), float(c[1])
            lines.append(f'<path class="offcanvas" d="M{_fmt(cx - 5, 3)},{_fmt(cy - 5, 3)} L{_fmt(cx + 5, 3)},'
                         f'{_fmt(cy + 5, 3)} M{_fmt(cx - 5, 3)},{_fmt(cy + 5, 3)} L{_fmt(cx + 5, 3)},'
                         f'{_fmt(cy - 5, 3)}" stroke="blue" stroke-width="1.5"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def laser_csv(spots: Sequence[LaserSpot]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LASER_FIELDS)
    for s in spots:
        sx, sy = s.spot_mm if s.spot_mm is not None else (math.nan, math.nan)
        w.writerow([s.index, s.x_steps, s.y_steps, _fmt(s.gaze_deg, 9), _fmt(s.reflection_deg, 9),
                    f"{s.doubling_error_deg:.3e}", _fmt(s.planned_mm[0]), _fmt(s.planned_mm[1]),
                    _fmt(sx), _fmt(sy), int(s.on_canvas)])
    return buf.getvalue()


def export_laser_pattern(pattern: PatternSpec, rig: LaserRig | None = None, svg_path=None, csv_path=None,
                         profile: MotionProfile | None = None) -> list[LaserSpot]:
    """Write the SVG overlay and spot CSV (next to the SVG unless ``csv_path`` is given)."""
    rig = rig or LaserRig()
    spots = laser_spots(pattern, rig)
    if svg_path is not None:
        svg_path = Path(svg_path)
        svg_path.write_text(laser_svg(pattern, spots, laser_path(pattern, rig, profile), rig))
        csv_path = Path(csv_path) if csv_path is not None else svg_path.with_suffix(".csv")
    if csv_path is not None:
        Path(csv_path).write_text(laser_csv(spots))
    return spots


# -- run directories and reports ---------------------------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: NaN becomes null and infinities become strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def find_runs(path) -> list[Path]:
    """The run at ``path`` itself, or every immediate subdirectory holding a manifest."""
    p = Path(path)
    if (p / "manifest.json").is_file():
        return [p]
    runs = sorted(d for d in p.iterdir() if (d / "manifest.json").is_file()) if p.is_dir() else []
    if not runs:
        raise RunNotFound(f"no run directories under {p}")
    return runs


def _write_csv(path: Path, rows: Sequence[dict], header: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(r.get(k, "")) for k in header])


def _cell(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.6f}"
    return str(v)


ACCURACY_FIELDS = ("run", "pattern", "point", "planned_x_px", "planned_y_px", "measured_x_px", "measured_y_px",
                   "dev_x_px", "dev_y_px", "dev_x_mm", "dev_y_mm", "dev_x_deg", "dev_y_deg", "n_samples", "n_trials")
PRECISION_FIELDS = ("run", "pattern", "point", "planned_x_px", "planned_y_px", "measured_x_px", "measured_y_px",
                    "sd_x_px", "sd_y_px", "sd_x_mm", "sd_y_mm", "sd_x_deg", "sd_y_deg", "n_samples", "n_trials")
MAINSEQ_FIELDS = ("run", "condition", "n", "slope", "intercept", "pv_at_10deg", "r2")


def analyze_pattern_run(run: Path) -> dict:
    cfg = load_config(run / "config.json")
    pattern = PatternSpec.from_dict(json.loads((run / "pattern.json").read_text()))
    streams = []
    for f in sorted((run / "samples").glob("trial_*.asc")):
        with open(f) as fh:
            streams.append(read_samples(fh))
    rec, sizes = pattern_recordings(streams, len(pattern.points))
    out = {"accuracy": point_table_rows(pattern, rec, cfg.geometry, "accuracy"), "precision": [], "bias": None}
    if len(streams) >= 2:
        out["precision"] = point_table_rows(pattern, rec, cfg.geometry, "precision")
    if pattern.name == "grid13" and len(streams) >= 4 and np.isfinite(sizes).all():
        out["bias"] = bias_report(sizes)
    return out


def analyze_experiment_run(run: Path) -> dict:
    cfg = load_config(run / "config.json")
    with open(run / "events.csv") as fh:
        rows = read_events(fh)
    names = [c.name for c in cfg.conditions]
    return {"anova": experiment_report(rows, cfg.participants, names, cfg.analysis),
            "mainseq": main_sequence_rows(rows, names)}


def analyze(run_path, report_dir) -> list[Path]:
    """Write accuracy.csv, precision.csv, mainseq.csv, anova.json and bias.json.

    Tables from several runs are stacked with a ``run`` column; the JSON
    reports are keyed by run name.  Files are written even when empty so the
    report directory always has the same shape.
    """
    runs = find_runs(run_path)
    report = Path(report_dir)
    report.mkdir(parents=True, exist_ok=True)
    acc, prec, mseq, anova, bias = [], [], [], {}, {}
    for run in runs:
        kind = json.loads((run / "manifest.json").read_text()).get("kind")
        name = run.name
        if kind == "pattern":
            res = analyze_pattern_run(run)
            acc += [{"run": name, **r} for r in res["accuracy"]]
            prec += [{"run": name, **r} for r in res["precision"]]
            if res["bias"] is not None:
                bias[name] = res["bias"]
        elif kind == "experiment":
            res = analyze_experiment_run(run)
            mseq += [{"run": name, **r} for r in res["mainseq"]]
            anova[name] = res["anova"]
        else:
            raise RunNotFound(f"{run}: unknown run kind {kind!r}")
    paths = [report / n for n in ("accuracy.csv", "precision.csv", "mainseq.csv", "anova.json", "bias.json")]
    _write_csv(paths[0], acc, ACCURACY_FIELDS)
    _write_csv(paths[1], prec, PRECISION_FIELDS)
    _write_csv(paths[2], mseq, MAINSEQ_FIELDS)
    _dump_json(paths[3], {"runs": anova})
    _dump_json(paths[4], {"runs": bias})
    return paths
