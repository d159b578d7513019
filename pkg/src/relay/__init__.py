"""Simulator of a robotic artificial eye filmed by a video P-CR eye tracker.

``relay.geometry``, ``relay.motion`` and ``relay.optics`` model the rig,
``relay.tracker`` and ``relay.events`` the tracker and its event parser,
``relay.stats`` the analysis and ``relay.harness`` the experiments.
"""

from ._backend import BACKEND
from .events import DetectorConfig, SaccadeEvent, detect_saccades, filter_valid_saccades
from .geometry import GazeDirection, LaserRig, ViewingGeometry, laser_spot
from .harness import (
    ExperimentConfig,
    PatternSpec,
    export_laser_pattern,
    gen_targets,
    make_pattern,
    run_precision_experiment,
    run_saccade_experiment,
)
from .motion import GimbalState, MotionProfile, PositioningNoise, plan_move
from .optics import CameraModel, EyeModel, SceneCondition
from .stats import fit_main_sequence, rm_anova
from .tracker import CalibrationGrid, CalibrationMap, TrackerConfig, calibrate_tracker

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CalibrationGrid", "CalibrationMap", "CameraModel", "DetectorConfig", "ExperimentConfig",
    "EyeModel", "GazeDirection", "GimbalState", "LaserRig", "MotionProfile", "PatternSpec", "PositioningNoise",
    "SaccadeEvent", "SceneCondition", "TrackerConfig", "ViewingGeometry", "calibrate_tracker", "detect_saccades",
    "export_laser_pattern", "filter_valid_saccades", "fit_main_sequence", "gen_targets", "laser_spot",
    "make_pattern", "plan_move", "rm_anova", "run_precision_experiment", "run_saccade_experiment",
]
