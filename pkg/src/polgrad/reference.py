"""Reference paths psi(t) for the tracking tasks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class ReferencePoint(NamedTuple):
    x: float
    y: float
    heading: float
    speed: float
    turn_rate: float  # d heading / dt along the reference


class ReferencePath:
    kind = ""

    def __call__(self, time: float) -> ReferencePoint:
        raise NotImplementedError

    def desired_state(self, model_name: str, time: float) -> np.ndarray:
        """Reference as a state of the given model: car (x, y, v, phi), unicycle (x, y, phi)."""
        r = self(time)
        if model_name in ("KinematicCar", "CarHiFi"):
            return np.array([r.x, r.y, r.speed, r.heading])
        if model_name == "Unicycle":
            return np.array([r.x, r.y, r.heading])
        raise ValueError(f"no reference state layout for model {model_name!r}")


@dataclass(frozen=True)
class Figure8(ReferencePath):
    """Two tangent circles traversed at constant speed, one lap per ``lap_time``.

    The crossing point is the origin with heading 0.  By default the first
    circle turns left (center (0, R)) and the second turns right (center
    (0, -R)); ``clockwise_first`` mirrors the path about the x axis.  Heading
    is unwrapped: it rises to 2*pi on the first circle and returns to 0.
    """

    diameter: float = 3.0
    lap_time: float = 5.5
    clockwise_first: bool = False
    kind = "Figure8"

    @property
    def radius(self) -> float:
        return 0.5 * self.diameter

    @property
    def length(self) -> float:
        return 2.0 * np.pi * self.diameter

    @property
    def speed(self) -> float:
        return self.length / self.lap_time

    def __call__(self, time: float) -> ReferencePoint:
        if time < 0:
            raise ValueError("reference time must be non-negative")
        R = self.radius
        half = np.pi * self.diameter
        s = ((time / self.lap_time) % 1.0) * self.length
        if s < half:
            ang = s / R
            x, y, heading, rate = R * np.sin(ang), R - R * np.cos(ang), ang, self.speed / R
        else:
            ang = (s - half) / R
            x, y, heading, rate = R * np.sin(ang), -R + R * np.cos(ang), 2.0 * np.pi - ang, -self.speed / R
        if self.clockwise_first:
            y, heading, rate = -y, -heading, -rate
        return ReferencePoint(float(x), float(y), float(heading), float(self.speed), float(rate))


@dataclass(frozen=True)
class Setpoint(ReferencePath):
    """A fixed pose with optional constant desired speed."""

    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    speed: float = 0.0
    kind = "Setpoint"

    def __call__(self, time: float) -> ReferencePoint:
        return ReferencePoint(self.x, self.y, self.heading, self.speed, 0.0)


@dataclass(frozen=True)
class WaypointTable(ReferencePath):
    """Piecewise-linear interpolation of timed (x, y) waypoints, held after the last one."""

    times: tuple = field(default=(0.0, 1.0))
    points: tuple = field(default=((0.0, 0.0), (1.0, 0.0)))
    kind = "WaypointTable"

    def __post_init__(self):
        ts = np.asarray(self.times, dtype=float)
        pts = np.asarray(self.points, dtype=float)
        if ts.ndim != 1 or len(ts) < 2 or pts.shape != (len(ts), 2) or np.any(np.diff(ts) <= 0):
            raise ValueError("waypoint times must be strictly increasing with one (x, y) per time")

    def __call__(self, time: float) -> ReferencePoint:
        ts = np.asarray(self.times, dtype=float)
        pts = np.asarray(self.points, dtype=float)
        k = int(np.clip(np.searchsorted(ts, time, side="right") - 1, 0, len(ts) - 2))
        seg = pts[k + 1] - pts[k]
        dur = ts[k + 1] - ts[k]
        lam = np.clip((time - ts[k]) / dur, 0.0, 1.0)
        pos = pts[k] + lam * seg
        moving = time < ts[-1]
        speed = float(np.hypot(*seg) / dur) if moving else 0.0
        return ReferencePoint(float(pos[0]), float(pos[1]), float(np.arctan2(seg[1], seg[0])), speed, 0.0)


def figure8_reference(path: Figure8, time: float) -> ReferencePoint:
    return path(time)
