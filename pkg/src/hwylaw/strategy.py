"""Compliance state-transition strategy: violations -> references/constraints.

Each active law maps onto up to four transition paths:

* path 1: a compliance reference speed
* path 2: a compliance speed constraint interval
* path 3: a compliance lateral-position reference
* path 4: a compliance lateral-position constraint interval

Speed-band laws (``a``/``b``) emit a reference in their violation phases and
keep the legal speed band installed as a constraint even once compliant.
The following-distance law (``c``) emits a recovery reference speed from a
constant-deceleration gap model plus a pull to the starting lane's center;
lane-change laws (``d``/``e``) pull back to the starting / current lane;
the lane-line dwell law (``f``) pulls to the current lane center only; the
overtaking-speed law (``g``) demands the required speed surplus and pins the
vehicle to the overtaking lane until it is reached.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .core import Interval, LawThresholds, RoadModel
from .monitor import LawPhase, ReferenceSample, ViolationReport

PATH_SPEED_REF = 1
PATH_SPEED_CONS = 2
PATH_LAT_REF = 3
PATH_LAT_CONS = 4

#: Comfortable deceleration used to derive default gap-recovery timings.
COMFORT_DECEL = 2.0


class Variable(enum.Enum):
    SPEED = "speed"
    LATERAL = "lateral"


class ConfigurationError(ValueError):
    """A directive was requested without the context it needs."""


@dataclass(frozen=True)
class ComplianceDirective:
    """Optional reference and/or constraint on one controlled variable.

    The transition-path set is derived, not stored: paths 1/2 are a speed
    reference/constraint, paths 3/4 a lateral reference/constraint.
    """

    variable: Variable
    source: str
    reference: float | None = None
    constraint: Interval | None = None

    def __post_init__(self) -> None:
        if self.reference is None and self.constraint is None:
            raise ValueError("directive must carry a reference or a constraint")
        if self.reference is not None and self.constraint is not None \
                and not self.constraint.contains(self.reference):
            raise ValueError(
                f"directive from {self.source}: reference {self.reference} outside "
                f"constraint [{self.constraint.lo}, {self.constraint.hi}]")

    @property
    def paths(self) -> frozenset[int]:
        out = set()
        if self.variable is Variable.SPEED:
            if self.reference is not None:
                out.add(PATH_SPEED_REF)
            if self.constraint is not None:
                out.add(PATH_SPEED_CONS)
        else:
            if self.reference is not None:
                out.add(PATH_LAT_REF)
            if self.constraint is not None:
                out.add(PATH_LAT_CONS)
        return frozenset(out)


@dataclass(frozen=True)
class FollowingGapContext:
    """Inputs of the constant-deceleration gap-recovery speed rule.

    ``v0_ego``/``v0_tgt`` and ``x0_ego``/``x0_tgt`` are ego/lead speeds and
    longitudinal positions when the rule is (re-)evaluated; ``D`` is the gap
    to recover. ``t1`` is the nominal time to match the lead's speed and
    ``t2`` the nominal time to reach the target gap.
    """

    v0_ego: float
    v0_tgt: float
    x0_ego: float
    x0_tgt: float
    D: float
    t1: float
    t2: float

    def __post_init__(self) -> None:
        if not (self.t2 > self.t1 > 0):
            raise ValueError(f"need t2 > t1 > 0, got t1={self.t1}, t2={self.t2}")
        if self.D <= 0:
            raise ValueError("compliance distance D must be positive")


def make_following_context(v_ego: float, v_tgt: float, gap: float, target_gap: float,
                           a_comf: float = COMFORT_DECEL,
                           t1_floor: float = 0.1) -> FollowingGapContext:
    """Build a gap-recovery context with the default t1/t2 schedule.

    t1 is the comfortable-deceleration time to match the lead's speed
    (floored so it stays positive once ego is already slower) and t2 grows
    with the remaining gap shortfall, so the commanded speed stays finite.
    Positions are passed through as 0/gap: only their difference matters.
    """
    t1 = max((v_ego - v_tgt) / a_comf, t1_floor)
    t2 = max(2.0 * t1, t1 + (target_gap - gap) / max(v_tgt, 1.0))
    return FollowingGapContext(v0_ego=v_ego, v0_tgt=v_tgt, x0_ego=0.0, x0_tgt=gap,
                               D=target_gap, t1=t1, t2=t2)


def following_reference_speed(ctx: FollowingGapContext) -> float:
    """Recovery reference speed for an insufficient following distance.

    Assumes ego decelerates at a constant rate while the lead holds speed;
    the result is floored at zero (no reverse command).
    """
    if ctx.t2 <= 0:
        raise ValueError("t2 must be positive")
    shortfall = ctx.D - ctx.x0_tgt + ctx.x0_ego
    v_ref = (-ctx.t1 * (ctx.v0_ego - ctx.v0_tgt) / ctx.t2
             - 2.0 * shortfall / ctx.t2
             + ctx.v0_tgt)
    return max(v_ref, 0.0)


@dataclass(frozen=True)
class DirectiveContext:
    """Road/lane context the directives are generated against."""

    road: RoadModel
    current_lane: int | None
    ego_width: float
    initial_ref: ReferenceSample
    initial_lane: int | None = None
    follow_lane: int | None = None      # lane held when the front-gap rule tripped
    overtake_lane: int | None = None
    v_tgt_overtaken: float | None = None
    following: FollowingGapContext | None = None


def _lane_band(road: RoadModel, lane_index: int, ego_width: float) -> Interval:
    lane = road.lanes[lane_index]
    lo = lane.y_right + 0.5 * ego_width
    hi = lane.y_left - 0.5 * ego_width
    if lo > hi:
        raise ConfigurationError(
            f"lane {lane_index} ({lane.width:.2f} m) too narrow for vehicle width {ego_width:.2f} m")
    return Interval(lo, hi)


def generate_directives(report: ViolationReport,
                        ctx: DirectiveContext,
                        thresholds: LawThresholds) -> list[ComplianceDirective]:
    """Directives for every law needing intervention, in fixed law order.

    Laws in their compliance phase emit nothing, except the speed-band laws
    whose legal-band constraint always remains installed; with an entirely
    clean report the initial reference therefore passes through untouched.
    """
    road = ctx.road
    out: list[ComplianceDirective] = []

    if ctx.current_lane is not None:
        v_min, v_max = road.speed_band(ctx.current_lane)
        band = Interval(v_min, v_max)

        for law, ref_speed in (("a", v_min), ("b", v_max)):
            phase = report.phase[law]
            if phase is LawPhase.VIOLATION:
                out.append(ComplianceDirective(Variable.SPEED, law, reference=ref_speed))
            elif phase is LawPhase.DECISION_VIOLATION:
                out.append(ComplianceDirective(Variable.SPEED, law,
                                               reference=ref_speed, constraint=band))
            else:
                out.append(ComplianceDirective(Variable.SPEED, law, constraint=band))

    if report.phase["c"] is LawPhase.VIOLATION:
        hold_lane = ctx.follow_lane if ctx.follow_lane is not None else ctx.initial_lane
        if hold_lane is None:
            raise ConfigurationError("law c active but no starting lane latched")
        if ctx.following is None:
            raise ConfigurationError("law c active but no front-gap context supplied")
        v_ref = following_reference_speed(ctx.following)
        if ctx.current_lane is not None:
            v_ref = min(v_ref, road.speed_band(ctx.current_lane)[1])
        out.append(ComplianceDirective(Variable.SPEED, "c", reference=v_ref))
        if ctx.current_lane is not None:
            out.append(ComplianceDirective(
                Variable.LATERAL, "c",
                reference=road.centerline(hold_lane),
                constraint=_lane_band(road, ctx.current_lane, ctx.ego_width)))

    if report.phase["d"] is LawPhase.VIOLATION:
        if ctx.initial_lane is None:
            raise ConfigurationError("law d active but no starting lane latched")
        if ctx.current_lane is not None:
            out.append(ComplianceDirective(
                Variable.LATERAL, "d",
                reference=road.centerline(ctx.initial_lane),
                constraint=_lane_band(road, ctx.current_lane, ctx.ego_width)))

    if report.phase["e"] is LawPhase.VIOLATION and ctx.current_lane is not None:
        out.append(ComplianceDirective(
            Variable.LATERAL, "e",
            reference=road.centerline(ctx.current_lane),
            constraint=_lane_band(road, ctx.current_lane, ctx.ego_width)))

    if report.phase["f"] is LawPhase.VIOLATION and ctx.current_lane is not None:
        out.append(ComplianceDirective(
            Variable.LATERAL, "f", reference=road.centerline(ctx.current_lane)))

    if report.phase["g"] is LawPhase.VIOLATION:
        if ctx.overtake_lane is None:
            raise ConfigurationError("law g active but no overtaking lane latched")
        if ctx.v_tgt_overtaken is None:
            raise ConfigurationError("law g active but overtaken vehicle speed unknown")
        v_ref = ctx.v_tgt_overtaken + thresholds.dv_ot
        v_ref = min(max(v_ref, 0.0), road.speed_band(ctx.overtake_lane)[1])
        out.append(ComplianceDirective(Variable.SPEED, "g", reference=v_ref))
        out.append(ComplianceDirective(
            Variable.LATERAL, "g",
            reference=road.centerline(ctx.overtake_lane),
            constraint=_lane_band(road, ctx.overtake_lane, ctx.ego_width)))

    return out
