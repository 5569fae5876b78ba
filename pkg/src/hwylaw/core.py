"""Shared geometric and kinematic vocabulary for highway compliance checks.

Conventions used throughout the package:

* SI units everywhere (m, m/s, s, rad). Regulatory values quoted in km/h
  are converted at the boundary with :func:`kmh`.
* The road is straight and aligned with the x axis; y is lateral and
  positive towards the LEFT of the driving direction, so "left lane" means
  larger y.
* A point exactly on a shared lane line belongs to the lane on its left
  (deterministic tie-break).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace


def kmh(value: float) -> float:
    """Convert a speed from km/h to m/s."""
    return value / 3.6


#: Speed above which the long (100 m) following-distance rule applies.
FAST_FOLLOW_SPEED = kmh(100.0)


@dataclass(frozen=True)
class VehicleState:
    """Kinematic state of one vehicle at one instant (road-aligned frame)."""

    id: int | str
    x: float                  # longitudinal position of the center (m)
    y: float                  # lateral position of the center (m, +left)
    vx: float                 # longitudinal speed (m/s)
    vy: float = 0.0           # lateral speed (m/s, +left)
    yaw: float = 0.0          # heading relative to the road direction (rad)
    yaw_rate: float = 0.0     # rad/s
    length: float = 4.0       # m
    width: float = 1.8        # m

    def __post_init__(self) -> None:
        if self.length <= 0 or self.width <= 0:
            raise ValueError(f"vehicle {self.id}: length/width must be positive")
        if self.vx < 0:
            raise ValueError(f"vehicle {self.id}: reversing (vx={self.vx}) not supported")

    def propagated(self, tau: float) -> "VehicleState":
        """State after driving `tau` seconds at constant velocity."""
        return replace(self, x=self.x + self.vx * tau, y=self.y + self.vy * tau)


@dataclass(frozen=True)
class Lane:
    """One lane: lateral line coordinates and its legal speed band."""

    y_right: float
    y_left: float
    v_min: float
    v_max: float

    def __post_init__(self) -> None:
        if self.y_left <= self.y_right:
            raise ValueError("lane must have y_left > y_right")
        if not (0 <= self.v_min < self.v_max):
            raise ValueError("lane speed band must satisfy 0 <= v_min < v_max")

    @property
    def center(self) -> float:
        return 0.5 * (self.y_right + self.y_left)

    @property
    def width(self) -> float:
        return self.y_left - self.y_right


@dataclass(frozen=True)
class RoadModel:
    """Straight multi-lane road; lanes ordered right (index 0) to left."""

    lanes: tuple[Lane, ...]

    def __post_init__(self) -> None:
        if not self.lanes:
            raise ValueError("road needs at least one lane")
        for a, b in zip(self.lanes, self.lanes[1:]):
            if not math.isclose(a.y_left, b.y_right, abs_tol=1e-9):
                raise ValueError("lanes must be contiguous, ordered right to left")

    @property
    def y_right_edge(self) -> float:
        return self.lanes[0].y_right

    @property
    def y_left_edge(self) -> float:
        return self.lanes[-1].y_left

    def centerline(self, lane_index: int) -> float:
        return self.lanes[lane_index].center

    def interior_line_ys(self) -> tuple[float, ...]:
        """Lateral coordinates of the shared (dashed) lines between lanes."""
        return tuple(lane.y_left for lane in self.lanes[:-1])

    def speed_band(self, lane_index: int) -> tuple[float, float]:
        lane = self.lanes[lane_index]
        return lane.v_min, lane.v_max


def uniform_road(n_lanes: int = 2, lane_width: float = 3.75,
                 v_min: float = kmh(60.0), v_max: float = kmh(120.0),
                 y0: float = 0.0) -> RoadModel:
    """Convenience builder: identical contiguous lanes starting at y0."""
    lanes = tuple(
        Lane(y_right=y0 + i * lane_width, y_left=y0 + (i + 1) * lane_width,
             v_min=v_min, v_max=v_max)
        for i in range(n_lanes)
    )
    return RoadModel(lanes)


@dataclass(frozen=True)
class LawThresholds:
    """Numeric thresholds of the digitized highway rules.

    Defaults: longitudinal-collision-time bound 2.3 s, minimum clearance
    for lane changes 14 m, lane-line dwell limit 6 s, required overtaking
    speed surplus 15 m/s, following distances 100 m (above 100 km/h) /
    50 m (below), lateral-intent speed 0.25 m/s, overtake-trigger
    collision time 20 s, and a 105 m recovery distance that keeps the
    following-distance rule from chattering around its 100 m boundary.
    """

    ttcx_min: float = 2.3
    d_clmin: float = 14.0
    t_max_cl: float = 6.0
    dv_ot: float = 15.0
    follow_dist_fast: float = 100.0
    follow_dist_slow: float = 50.0
    follow_speed_break: float = FAST_FOLLOW_SPEED
    lat_intent_speed: float = 0.25
    ttc_overtake: float = 20.0
    hysteresis_D: float = 105.0

    def __post_init__(self) -> None:
        for name in ("ttcx_min", "d_clmin", "t_max_cl", "dv_ot", "follow_dist_fast",
                     "follow_dist_slow", "follow_speed_break", "lat_intent_speed",
                     "ttc_overtake", "hysteresis_D"):
            if getattr(self, name) <= 0:
                raise ValueError(f"threshold {name} must be strictly positive")
        if self.follow_dist_fast <= self.follow_dist_slow:
            raise ValueError("follow_dist_fast must exceed follow_dist_slow")

    def follow_entry_distance(self, speed: float) -> float:
        """Following-distance bound that applies at the given ego speed."""
        return self.follow_dist_fast if speed > self.follow_speed_break else self.follow_dist_slow

    def follow_recovery_distance(self, entry_distance: float) -> float:
        """Gap a following-distance episode must reach before it clears.

        The extra margin above the fast-rule entry distance (105 - 100 m by
        default) is applied on top of whichever entry bound latched the
        episode, so the slow rule recovers at 55 m.
        """
        return entry_distance + (self.hysteresis_D - self.follow_dist_fast)


@dataclass(frozen=True)
class Interval:
    """Closed numeric interval [lo, hi]."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        if self.lo > self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    def contains(self, value: float, tol: float = 1e-9) -> bool:
        return self.lo - tol <= value <= self.hi + tol

    def intersect(self, other: "Interval", tol: float = 1e-12) -> "Interval | None":
        lo = max(self.lo, other.lo)
        hi = min(self.hi, other.hi)
        if lo > hi + tol:
            return None
        return Interval(lo, max(hi, lo))

    def clamp(self, value: float) -> float:
        return min(max(value, self.lo), self.hi)


def longitudinal_gap(ego: VehicleState, tgt: VehicleState) -> float:
    """Signed bumper-to-bumper longitudinal gap from ego to tgt.

    Positive when tgt's rear bumper is ahead of ego's front bumper;
    negative when the bodies overlap longitudinally.
    """
    return (tgt.x - ego.x) - 0.5 * (tgt.length + ego.length)


def ttcx(ego: VehicleState, tgt: VehicleState) -> float | None:
    """Time to longitudinal collision under constant speeds, None if diverging.

    Only motion along x is considered. The rear vehicle (smaller x) must be
    faster than the front one for a collision course to exist; the result is
    the current bumper gap divided by the closing speed.
    """
    if tgt.x >= ego.x:
        rear, front = ego, tgt
    else:
        rear, front = tgt, ego
    closing = rear.vx - front.vx
    if closing <= 0:
        return None
    gap = max(longitudinal_gap(rear, front), 0.0)
    return gap / closing


def lane_of(y: float, road: RoadModel) -> int | None:
    """Index of the lane whose [y_right, y_left) interval contains y.

    A point exactly on a shared line belongs to the lane on the left; the
    left road edge itself still belongs to the leftmost lane. Returns None
    off the road.
    """
    if y < road.y_right_edge or y > road.y_left_edge:
        return None
    for i, lane in enumerate(road.lanes):
        if lane.y_right <= y < lane.y_left:
            return i
    return len(road.lanes) - 1 if y == road.y_left_edge else None


def overlaps_lane_line(ego: VehicleState, line_y: float) -> bool:
    """True iff the vehicle footprint straddles the given line (small yaw)."""
    return abs(ego.y - line_y) < 0.5 * ego.width


def on_any_interior_line(ego: VehicleState, road: RoadModel) -> bool:
    return any(overlaps_lane_line(ego, line) for line in road.interior_line_ys())
