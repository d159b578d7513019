"""Two-axis stepper gimbal: move planning, trajectory sampling, positioning error."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from .geometry import DEG_PER_MICROSTEP, TRACKABLE_LIMIT_DEG, pps_to_degps


@dataclass(frozen=True)
class MotionProfile:
    max_pps: float = 3200.0
    accel_pps2: float = 80000.0

    def __post_init__(self):
        if not (self.max_pps > 0 and self.accel_pps2 > 0):
            raise ValueError("max_pps and accel_pps2 must be positive")

    @property
    def triangle_limit_steps(self) -> float:
        """Longest move that never reaches ``max_pps`` (128 steps by default)."""
        return self.max_pps**2 / self.accel_pps2


@dataclass(frozen=True)
class GimbalState:
    x_steps: int = 0
    y_steps: int = 0

    def __post_init__(self):
        for v in (self.x_steps, self.y_steps):
            if abs(v * DEG_PER_MICROSTEP) >= TRACKABLE_LIMIT_DEG:
                raise ValueError(f"gimbal position {v} micro-steps is beyond the mechanical range")

    @property
    def degrees(self) -> tuple[float, float]:
        return self.x_steps * DEG_PER_MICROSTEP, self.y_steps * DEG_PER_MICROSTEP


@dataclass(frozen=True)
class AxisPlan:
    """Velocity plan of one axis: ramp up, optional cruise, ramp down."""

    start: float  # steps
    distance: float  # signed steps
    peak_pps: float
    accel_pps2: float
    t_accel: float
    t_cruise: float

    @property
    def duration(self) -> float:
        return 2.0 * self.t_accel + self.t_cruise

    @property
    def triangular(self) -> bool:
        return self.t_cruise == 0.0

    def position(self, t):
        """Position in micro-steps at times ``t`` seconds (array-friendly)."""
        t = np.clip(np.asarray(t, float), 0.0, self.duration)
        d = abs(self.distance)
        if d == 0.0:
            return np.full(t.shape, self.start)
        a, v, ta, tc = self.accel_pps2, self.peak_pps, self.t_accel, self.t_cruise
        t_dec = ta + tc
        ramp = 0.5 * a * ta * ta
        rem = self.duration - t
        s = np.where(
            t < ta,
            0.5 * a * t * t,
            np.where(t < t_dec, ramp + v * (t - ta), d - 0.5 * a * rem * rem),
        )
        return self.start + math.copysign(1.0, self.distance) * s

    def velocity(self, t):
        t = np.asarray(t, float)
        if self.distance == 0.0:
            return np.zeros(t.shape)
        a, v, ta = self.accel_pps2, self.peak_pps, self.t_accel
        rem = self.duration - t
        speed = np.where(t < ta, a * t, np.where(t < ta + self.t_cruise, v, a * rem))
        speed = np.where((t < 0) | (t > self.duration), 0.0, speed)
        return math.copysign(1.0, self.distance) * speed


def plan_axis(start: float, end: float, p: MotionProfile) -> AxisPlan:
    d = float(end - start)
    dist = abs(d)
    a = p.accel_pps2
    if dist == 0.0:
        return AxisPlan(float(start), 0.0, 0.0, a, 0.0, 0.0)
    if dist <= p.triangle_limit_steps:
        peak = math.sqrt(a * dist)
        return AxisPlan(float(start), d, peak, a, peak / a, 0.0)
    t_acc = p.max_pps / a
    cruise = (dist - p.max_pps**2 / a) / p.max_pps
    return AxisPlan(float(start), d, p.max_pps, a, t_acc, cruise)


@dataclass(frozen=True)
class Trajectory:
    start: GimbalState
    end: GimbalState
    x: AxisPlan
    y: AxisPlan

    @property
    def duration(self) -> float:
        return max(self.x.duration, self.y.duration)

    @property
    def segments(self) -> list[tuple[str, str, float, float]]:
        """(axis, phase, t0, t1) for every non-empty phase."""
        out = []
        for name, ax in (("x", self.x), ("y", self.y)):
            if ax.distance == 0.0:
                continue
            t0 = 0.0
            for phase, dt in (("accelerate", ax.t_accel), ("cruise", ax.t_cruise), ("decelerate", ax.t_accel)):
                if dt > 0:
                    out.append((name, phase, t0, t0 + dt))
                t0 += dt
        return out


def plan_move(start: GimbalState, end: GimbalState, p: MotionProfile | None = None) -> Trajectory:
    """Plan both axes independently; they start together."""
    p = p or MotionProfile()
    return Trajectory(start, end, plan_axis(start.x_steps, end.x_steps, p), plan_axis(start.y_steps, end.y_steps, p))


def sample_trajectory(t: Trajectory, time_s):
    """Continuous gimbal angles in degrees at ``time_s`` (scalar or array)."""
    if np.any(np.asarray(time_s) < 0):
        raise ValueError("time must be non-negative")
    x = t.x.position(time_s) * DEG_PER_MICROSTEP
    y = t.y.position(time_s) * DEG_PER_MICROSTEP
    if np.ndim(time_s) == 0:
        return float(x), float(y)
    return x, y


def peak_velocity_of_move(amplitude_deg: float, p: MotionProfile | None = None) -> float:
    """Closed-form peak speed of a single-axis move of ``amplitude_deg``."""
    if amplitude_deg < 0:
        raise ValueError("amplitude must be non-negative")
    p = p or MotionProfile()
    accel_degps2 = p.accel_pps2 * DEG_PER_MICROSTEP
    return min(pps_to_degps(p.max_pps), math.sqrt(accel_degps2 * amplitude_deg))


@dataclass(frozen=True)
class PositioningNoise:
    """Integer end-of-move error, uniform over ``{-e, ..., +e}`` per axis.

    ``scope="position"`` makes the error a fixed function of the commanded
    position within a session (an open-loop stepper lands on the same wrong
    micro-step every time it revisits a target).  ``scope="move"`` draws a
    fresh error for each move.
    """

    max_error_microsteps: int = 2
    scope: str = "position"
    stream: int = 0

    def __post_init__(self):
        if self.max_error_microsteps < 0:
            raise ValueError("max_error_microsteps must be >= 0")
        if self.scope not in ("position", "move"):
            raise ValueError(f"unknown noise scope {self.scope!r}")


def _position_error(seed: int, x: int, y: int, e: int) -> tuple[int, int]:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(zlib.crc32(b"position-error"), x & 0xFFFFFFFF, y & 0xFFFFFFFF))
    dx, dy = np.random.default_rng(ss).integers(-e, e + 1, size=2)
    return int(dx), int(dy)


def apply_positioning_noise(target: GimbalState, n: PositioningNoise, rng: np.random.Generator | None = None) -> GimbalState:
    """Realised landing position for a commanded ``target``.

    With ``scope="move"`` the draw comes from ``rng``, so the result is
    reproducible given the generator state.
    """
    e = n.max_error_microsteps
    if e == 0:
        return target
    if n.scope == "position":
        dx, dy = _position_error(n.stream, target.x_steps, target.y_steps, e)
    else:
        if rng is None:
            raise ValueError("scope='move' needs an rng stream")
        dx, dy = (int(v) for v in rng.integers(-e, e + 1, size=2))
    return GimbalState(target.x_steps + dx, target.y_steps + dy)
