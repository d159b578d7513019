"""Compiled raster kernels against the numpy fallback.

Times ``measure_batch`` (render + detect per frame) on a realistic batch of
poses, checks that both backends return identical measurements, and times
one raster-mode saccade cell end to end under each backend.

    python benchmarks/bench_kernels.py [--frames 2000] [--repeat 3]
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from relay import _fallback
from relay.optics import CameraModel, EyeModel, SceneCondition, render_params
from relay.tracker import TrackerConfig, _rois, pose_features

try:
    from relay import _kernels
except ImportError:
    _kernels = None

CELL_SCRIPT = """
import time
from relay import harness, BACKEND
cfg = harness.ExperimentConfig(participants=1, saccades_per_condition={n}, mode="raster", calibration_frames=2)
cal = harness.calibrate_run(cfg)
t0 = time.perf_counter()
harness.simulate_cell(cfg, cal, 0, "medium")
print(BACKEND, time.perf_counter() - t0)
"""


def batch(n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    yaw, pitch = rng.uniform(-18, 18, n), rng.uniform(-11, 11, n)
    eye, cam, tr = EyeModel(), CameraModel(), TrackerConfig()
    f = pose_features(yaw, pitch, eye, cam)
    params = render_params(f, eye, cam, SceneCondition())
    rois = _rois(f, cam, tr.roi_margin_px)
    return (params, rois, 12345, np.arange(n, dtype=np.int64), float(cam.pixel_noise_gray),
            float(eye.pupil_gray), float(eye.iris_gray), tr.pupil_threshold, tr.cr_threshold, tr.cr_dilate_px, tr.min_pupil_area_px)


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--cell-saccades", type=int, default=10, help="saccades in the end-to-end cell (0 skips it)")
    args = ap.parse_args(argv)

    data = batch(args.frames)
    t_py = best_of(lambda: _fallback.measure_batch(*data), args.repeat)
    print(f"measure_batch, {args.frames} frames")
    print(f"  numpy fallback : {1e3 * t_py / args.frames:8.3f} ms/frame")
    if _kernels is None:
        print("  cython         : not built")
        return 0
    t_cy = best_of(lambda: _kernels.measure_batch(*data), args.repeat)
    same = np.array_equal(_kernels.measure_batch(*data), _fallback.measure_batch(*data), equal_nan=True)
    print(f"  cython         : {1e3 * t_cy / args.frames:8.3f} ms/frame  ({t_py / t_cy:.1f}x)")
    print(f"  identical      : {same}")

    if args.cell_saccades > 0:
        print(f"raster cell, {args.cell_saccades} saccades")
        for force in (False, True):
            env = dict(os.environ)
            env.pop("RELAY_PURE_PYTHON", None)
            if force:
                env["RELAY_PURE_PYTHON"] = "1"
            out = subprocess.run([sys.executable, "-c", CELL_SCRIPT.format(n=args.cell_saccades)],
                                 env=env, capture_output=True, text=True, check=True).stdout.split()
            print(f"  {out[0]:<15}: {float(out[1]):8.2f} s")
    return 0 if same else 1


if __name__ == "__main__":
    sys.exit(main())
