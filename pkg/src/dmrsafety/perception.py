"""Synthetic detection streams, ground-plane projection and zone classification."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from .distributions import ConfigError, RngStream
from .engine import VirtualTime, ms
from .rules import SafetyPredicate
from .units import quantize_micro

INF = math.inf
SCENARIO_KINDS = ("baseline", "occlusion", "multi_target")


class Zone(Enum):
    STOP = "Stop"
    WARNING = "Warning"
    SAFE = "Safe"


@dataclass(frozen=True)
class ZoneState:
    zone: Zone
    distance: float


@dataclass(frozen=True)
class BoundingBox:
    cls: str
    confidence: float
    footprint: tuple[float, float, float, float]  # x, y, width, height in pixels
    ground_point: tuple[float, float]

    def __post_init__(self):
        if self.cls not in ("human", "object"):
            raise ValueError(f"unknown box class {self.cls!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be in [0, 1]")
        if self.footprint[2] <= 0 or self.footprint[3] <= 0:
            raise ValueError("footprint must have positive area")


@dataclass(frozen=True)
class DetectionFrame:
    frame_id: int
    captured_at: VirtualTime
    boxes: tuple[BoundingBox, ...]
    true_distance: float


class Calibration:
    """Planar homogeneous transform from floor-plane coordinates to the robot frame."""

    def __init__(self, matrix: Optional[Sequence[Sequence[float]]] = None):
        m = np.eye(3) if matrix is None else np.asarray(matrix, dtype=float)
        if m.shape != (3, 3):
            raise ConfigError("calibration must be a 3x3 matrix")
        if abs(np.linalg.det(m)) < 1e-12 or abs(m[2, 2]) < 1e-12:
            raise ConfigError("calibration transform is degenerate")
        self.matrix = m
        self.inverse = np.linalg.inv(m)
        self.identity = bool(np.array_equal(m, np.eye(3)))

    def to_robot(self, point: tuple[float, float]) -> tuple[float, float]:
        if self.identity:
            return point
        x, y, w = self.matrix @ (point[0], point[1], 1.0)
        return x / w, y / w

    def to_floor(self, point: tuple[float, float]) -> tuple[float, float]:
        if self.identity:
            return point
        x, y, w = self.inverse @ (point[0], point[1], 1.0)
        return x / w, y / w


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-linear separation distance over time, optionally periodic."""

    waypoints: tuple[tuple[VirtualTime, float], ...]
    repeat: Optional[VirtualTime] = None

    def __post_init__(self):
        if not self.waypoints:
            raise ConfigError("trajectory needs at least one waypoint")
        times = [t for t, _ in self.waypoints]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("waypoint times must be strictly increasing")
        if times[0] < 0 or any(d < 0 for _, d in self.waypoints):
            raise ConfigError("waypoint times and distances must be >= 0")
        if self.repeat is not None and self.repeat <= times[-1]:
            raise ConfigError("repeat period must exceed the last waypoint time")

    def at(self, t: VirtualTime) -> float:
        pts = self.waypoints
        if self.repeat is not None:
            t %= self.repeat
            if t < pts[0][0]:
                t += self.repeat
            # closing segment from the last waypoint back to the first one
            pts = pts + ((pts[0][0] + self.repeat, pts[0][1]),)
        if t <= pts[0][0]:
            return pts[0][1]
        for (t0, d0), (t1, d1) in zip(pts, pts[1:]):
            if t <= t1:
                return d0 + (d1 - d0) * (t - t0) / (t1 - t0)
        return pts[-1][1]

    def breakpoints(self, start: VirtualTime, end: VirtualTime) -> list[VirtualTime]:
        """Waypoint instants strictly inside (start, end)."""
        if self.repeat is None:
            base = [t for t, _ in self.waypoints]
            return [t for t in base if start < t < end]
        out = []
        period = self.repeat
        k = start // period
        local = sorted({t for t, _ in self.waypoints} | {0})
        while k * period < end:
            for t in local:
                g = k * period + t
                if start < g < end:
                    out.append(g)
            k += 1
        return out


@dataclass(frozen=True)
class Actor:
    trajectory: Trajectory
    bearing: float = 0.0  # radians in the robot frame
    cls: str = "human"


@dataclass(frozen=True)
class ScenarioScript:
    kind: str
    actors: tuple[Actor, ...]
    frame_period: VirtualTime
    detection_noise: float = 0.0
    miss_rate: float = 0.0
    duration: Optional[VirtualTime] = None
    calibration: Calibration = field(default_factory=Calibration, compare=False)
    name: str = "scenario"

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}")
        if self.frame_period <= 0:
            raise ConfigError("frame_period must be > 0")
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ConfigError("miss_rate must be in [0, 1]")
        if self.detection_noise < 0:
            raise ConfigError("detection_noise must be >= 0")

    def in_range(self, t: VirtualTime) -> bool:
        return t >= 0 and (self.duration is None or t <= self.duration)

    def true_distance(self, t: VirtualTime) -> float:
        humans = [a for a in self.actors if a.cls == "human"]
        if not humans or not self.in_range(t):
            return INF
        return min(a.trajectory.at(t) for a in humans)

    def min_true_distance(self, start: VirtualTime, end: VirtualTime) -> float:
        """Minimum ground-truth human distance over the closed window [start, end]."""
        best = INF
        for actor in self.actors:
            if actor.cls != "human":
                continue
            for t in [start, end, *actor.trajectory.breakpoints(start, end)]:
                if self.in_range(t):
                    best = min(best, actor.trajectory.at(t))
        return best

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], name: str = "scenario") -> "ScenarioScript":
        try:
            actors = []
            for raw in data["actors"]:
                wps = tuple((ms(float(t)), float(d)) for t, d in raw["waypoints"])
                repeat = raw.get("repeat_ms")
                traj = Trajectory(wps, None if repeat is None else ms(float(repeat)))
                actors.append(Actor(traj, math.radians(float(raw.get("bearing_deg", 0.0))), raw.get("class", "human")))
            duration = data.get("duration_ms")
            return cls(
                kind=data.get("kind", "baseline"),
                actors=tuple(actors),
                frame_period=ms(float(data.get("frame_period_ms", 33.333))),
                detection_noise=float(data.get("detection_noise_m", 0.0)),
                miss_rate=float(data.get("miss_rate", 0.0)),
                duration=None if duration is None else ms(float(duration)),
                calibration=Calibration(data.get("calibration")),
                name=data.get("name", name),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid scenario script: {exc}") from exc


def _footprint(distance: float, bearing: float) -> tuple[float, float, float, float]:
    # a 1.7 m tall person seen by an overhead camera with ~600 px focal length
    height = max(4.0, 1020.0 / (1.0 + distance))
    width = 0.4 * height
    cx = 640.0 + 300.0 * math.sin(bearing)
    cy = 360.0 + 40.0 * distance
    return cx - width / 2, cy - height, width, height


def next_frame(script: ScenarioScript, t: VirtualTime, rng: RngStream, frame_id: Optional[int] = None) -> DetectionFrame:
    """Synthesize the detection frame captured at ``t``.

    Each actor draws one miss decision and one noise sample per frame, in
    actor order, so the stream position never depends on earlier outcomes.
    """
    fid = t // script.frame_period if frame_id is None else frame_id
    if not script.in_range(t):
        return DetectionFrame(fid, t, (), INF)
    boxes = []
    confidence = 0.62 if script.kind == "occlusion" else 0.91
    for actor in script.actors:
        missed = rng.random() < script.miss_rate
        noise = rng.normal(script.detection_noise)
        if missed and actor.cls == "human":
            continue
        d = max(0.0, actor.trajectory.at(t) + noise)
        robot_point = (d * math.cos(actor.bearing), d * math.sin(actor.bearing))
        boxes.append(
            BoundingBox(
                cls=actor.cls,
                confidence=confidence,
                footprint=_footprint(d, actor.bearing),
                ground_point=script.calibration.to_floor(robot_point),
            )
        )
    return DetectionFrame(fid, t, tuple(boxes), script.true_distance(t))


def project_distance(frame: DetectionFrame, calibration: Optional[Calibration] = None) -> float:
    """Distance from the robot origin to the nearest detected human; ``inf`` if none."""
    cal = calibration or Calibration()
    best = INF
    for box in frame.boxes:
        if box.cls != "human":
            continue
        x, y = cal.to_robot(box.ground_point)
        best = min(best, math.hypot(x, y))
    return best


def classify_zone(d: float, pred: SafetyPredicate) -> ZoneState:
    if d < 0:
        raise ValueError("distance must be >= 0")
    if math.isinf(d):
        return ZoneState(Zone.SAFE, d)
    q = quantize_micro(d)
    if q < pred.d_min:
        zone = Zone.STOP
    elif q < pred.d_min + pred.warning_margin:
        zone = Zone.WARNING
    else:
        zone = Zone.SAFE
    return ZoneState(zone, float(d))


def stop_zone_intervals(
    script: ScenarioScript, d_min: Fraction, end: Optional[VirtualTime] = None
) -> list[tuple[VirtualTime, VirtualTime]]:
    """Merged closed intervals of whole microseconds with a human at ``d < d_min``."""
    stop = script.duration if end is None else end
    if stop is None:
        raise ValueError("an end time is needed for scripts without a duration")
    limit = float(d_min)
    intervals: list[tuple[VirtualTime, VirtualTime]] = []
    for actor in script.actors:
        if actor.cls != "human":
            continue
        traj = actor.trajectory
        cuts = [0, *traj.breakpoints(0, stop), stop]
        for t0, t1 in zip(cuts, cuts[1:]):
            d0, d1 = traj.at(t0), traj.at(t1)
            if d0 < limit and d1 < limit:
                intervals.append((t0, t1))
            elif d0 >= limit and d1 < limit:
                tc = t0 + (d0 - limit) / (d0 - d1) * (t1 - t0)
                first = math.floor(tc) + 1
                while first > t0 and traj.at(first - 1) < limit:
                    first -= 1
                while traj.at(first) >= limit and first < t1:
                    first += 1
                intervals.append((first, t1))
            elif d0 < limit <= d1:
                tc = t0 + (limit - d0) / (d1 - d0) * (t1 - t0)
                intervals.append((t0, max(t0, math.ceil(tc) - 1)))
    intervals.sort()
    merged: list[tuple[VirtualTime, VirtualTime]] = []
    for a, b in intervals:
        if merged and a <= merged[-1][1] + 1:
            merged[-1] = (merged[-1][0], max(merged[-1][1], b))
        else:
            merged.append((a, b))
    return merged


def demand_instants(script: ScenarioScript, d_min: Fraction, end: Optional[VirtualTime] = None) -> list[VirtualTime]:
    """Instants at which the ground-truth human distance enters the Stop Zone.

    Each returned instant is the first whole microsecond with ``d < d_min``
    after a period with ``d >= d_min`` (or t=0 if the run starts inside).
    """
    return [a for a, _ in stop_zone_intervals(script, d_min, end)]
