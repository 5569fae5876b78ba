"""Online violation monitor for the seven basic highway violation types.

The monitor predicts short-horizon ego states, evaluates the digitized rule
predicates (laws ``a``..``g`` below) against them, and runs per-law state
machines. Laws:

* ``a`` speed below the lane minimum, ``b`` speed above the lane maximum
* ``c`` insufficient distance to the front vehicle (100 m above 100 km/h,
  50 m below, with a recovery margin so the episode does not chatter)
* ``d`` / ``e`` left / right lane unsafe for a lane change (a rear vehicle
  in the target lane closer than 14 m or on a < 2.3 s collision course)
* ``f`` dwelling on a lane line longer than 6 s
* ``g`` overtaking without the required 15 m/s speed surplus over the
  overtaken vehicle

Speed and following distance (``a``/``b``/``c``) are monitored continuously;
``d``/``e``/``f``/``g`` are armed only by a lane-change or overtake intent.
A law flags as soon as its predicate holds at ANY predicted step, which is
the conservative reading of "intervene before the violation happens".
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Callable, Sequence

from .core import (
    LawThresholds,
    RoadModel,
    VehicleState,
    lane_of,
    longitudinal_gap,
    on_any_interior_line,
    overlaps_lane_line,
    ttcx,
)

LAWS: tuple[str, ...] = ("a", "b", "c", "d", "e", "f", "g")
LAW_ORDER = {law: i for i, law in enumerate(LAWS)}


class IntentKind(enum.Enum):
    NONE = "none"
    CHANGE_LEFT = "change_left"
    CHANGE_RIGHT = "change_right"
    OVERTAKE = "overtake"


@dataclass(frozen=True)
class Intent:
    """A behavioral decision intent and the time it was first held."""

    kind: IntentKind = IntentKind.NONE
    since: float | None = None

    @property
    def is_none(self) -> bool:
        return self.kind is IntentKind.NONE


class LawPhase(enum.Enum):
    VIOLATION = "violation"
    DECISION_VIOLATION = "decision_violation"
    COMPLIANCE = "compliance"


@dataclass(frozen=True)
class ViolationReport:
    """Per-tick monitor output: active laws, phases, and maneuver latches.

    ``line_enter_time`` is the instant the footprint first overlapped a lane
    line (None once fully inside a lane). ``initial_lane`` is latched when a
    trigger fires and names the lane the maneuver started from;
    ``overtake_lane`` is latched once an overtaking lane change completes.
    """

    active: frozenset[str] = frozenset()
    phase: dict[str, LawPhase] = None  # type: ignore[assignment]
    line_enter_time: float | None = None
    initial_lane: int | None = None
    overtake_lane: int | None = None
    intent: Intent = Intent()
    overtake_active: bool = False
    overtake_target_id: int | str | None = None
    follow_recovery_gap: float | None = None   # latched recovery gap while c is active
    follow_lead_id: int | str | None = None
    follow_lane: int | None = None             # lane occupied when c triggered

    def __post_init__(self) -> None:
        if self.phase is None:
            object.__setattr__(self, "phase", {law: LawPhase.COMPLIANCE for law in LAWS})

    @classmethod
    def empty(cls) -> "ViolationReport":
        return cls()


def propagate_constant_velocity(states: Sequence[VehicleState], tau: float) -> list[VehicleState]:
    return [s.propagated(tau) for s in states]


def predict_states(ego: VehicleState,
                   plan: Callable[[float], VehicleState] | None,
                   horizon: int,
                   dt: float) -> list[VehicleState]:
    """Predicted ego states at offsets dt, 2*dt, ..., horizon*dt.

    With a plan the states are sampled from it (the plan callable maps a
    time offset to a state); without one the current state is rolled out at
    constant velocity.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if plan is not None:
        return [plan(k * dt) for k in range(1, horizon + 1)]
    return [ego.propagated(k * dt) for k in range(1, horizon + 1)]


def _front_target(ego: VehicleState, others: Sequence[VehicleState],
                  road: RoadModel) -> VehicleState | None:
    """Nearest vehicle ahead of ego in ego's lane."""
    ego_lane = lane_of(ego.y, road)
    if ego_lane is None:
        return None
    best = None
    for tgt in others:
        if tgt.x <= ego.x or lane_of(tgt.y, road) != ego_lane:
            continue
        if best is None or tgt.x < best.x:
            best = tgt
    return best


def _rear_targets(ego: VehicleState, others: Sequence[VehicleState],
                  road: RoadModel, lane_index: int) -> list[VehicleState]:
    """Vehicles at or behind ego's position in the given lane."""
    return [tgt for tgt in others
            if tgt.x <= ego.x and lane_of(tgt.y, road) == lane_index]


def _rear_gap(ego: VehicleState, rear: VehicleState) -> float:
    """Non-negative bumper gap between a rear vehicle and ego."""
    return max(longitudinal_gap(rear, ego), 0.0)


def detect_intent(ego: VehicleState,
                  surroundings: Sequence[VehicleState],
                  thresholds: LawThresholds,
                  external: Intent | None = None,
                  road: RoadModel | None = None,
                  t: float = 0.0,
                  prev: Intent | None = None) -> Intent:
    """Decision intent, preferring an externally supplied (behavioral) one.

    Without an external intent, lateral speed beyond ``lat_intent_speed``
    implies a lane change in that direction, upgraded to an overtake when a
    slower lead is ahead on a sub-``ttc_overtake`` collision course.
    """
    if external is not None:
        return external

    kind = IntentKind.NONE
    if ego.vy > thresholds.lat_intent_speed:
        kind = IntentKind.CHANGE_LEFT
    elif ego.vy < -thresholds.lat_intent_speed:
        kind = IntentKind.CHANGE_RIGHT

    if abs(ego.vy) > thresholds.lat_intent_speed:
        for tgt in surroundings:
            if tgt.x <= ego.x or tgt.vx >= ego.vx:
                continue
            if road is not None:
                if lane_of(tgt.y, road) != lane_of(ego.y, road):
                    continue
            elif abs(tgt.y - ego.y) > 2.0:
                continue
            tc = ttcx(ego, tgt)
            if tc is not None and abs(tc) < thresholds.ttc_overtake:
                kind = IntentKind.OVERTAKE
                break

    if kind is IntentKind.NONE:
        return Intent()
    since = prev.since if (prev is not None and prev.kind is kind and prev.since is not None) else t
    return Intent(kind, since)


def evaluate_predicates(pred_states: Sequence[VehicleState],
                        surroundings_per_step: Sequence[Sequence[VehicleState]],
                        road: RoadModel,
                        intent: Intent,
                        report_prev: ViolationReport,
                        t: float,
                        thresholds: LawThresholds) -> set[str]:
    """Laws whose predicate holds at any predicted step, after trigger gating.

    ``report_prev`` supplies the lane-line timer, the latched
    following-distance recovery gap, and the overtake latches. The adjacent
    target lanes for ``d``/``e`` are fixed from the first predicted state.
    """
    active: set[str] = set()
    check_d = intent.kind is IntentKind.CHANGE_LEFT or (
        intent.kind is IntentKind.OVERTAKE and report_prev.overtake_lane is None)
    check_e = intent.kind is IntentKind.CHANGE_RIGHT or (
        intent.kind is IntentKind.OVERTAKE and report_prev.overtake_lane is not None)
    check_g = (report_prev.overtake_active
               and report_prev.overtake_lane is not None
               and report_prev.overtake_target_id is not None)
    check_f = not intent.is_none or report_prev.overtake_active

    base_lane = lane_of(pred_states[0].y, road)
    left_lane = base_lane + 1 if base_lane is not None and base_lane + 1 < len(road.lanes) else None
    right_lane = base_lane - 1 if base_lane is not None and base_lane >= 1 else None

    for ego_k, others_k in zip(pred_states, surroundings_per_step):
        lane_idx = lane_of(ego_k.y, road)

        if lane_idx is not None:
            v_min, v_max = road.speed_band(lane_idx)
            if ego_k.vx < v_min:
                active.add("a")
            if ego_k.vx > v_max:
                active.add("b")

        front = _front_target(ego_k, others_k, road)
        if front is not None:
            gap = longitudinal_gap(ego_k, front)
            if gap < thresholds.follow_entry_distance(ego_k.vx):
                active.add("c")
            elif (report_prev.active and "c" in report_prev.active
                  and report_prev.follow_recovery_gap is not None
                  and gap < report_prev.follow_recovery_gap):
                active.add("c")  # hysteresis: stay latched until the recovery gap

        if check_d and left_lane is not None:
            for rear in _rear_targets(ego_k, others_k, road, left_lane):
                tc = ttcx(ego_k, rear)
                if (tc is not None and tc <= thresholds.ttcx_min) or \
                        _rear_gap(ego_k, rear) <= thresholds.d_clmin:
                    active.add("d")
                    break

        if check_e and right_lane is not None:
            for rear in _rear_targets(ego_k, others_k, road, right_lane):
                tc = ttcx(ego_k, rear)
                if (tc is not None and tc <= thresholds.ttcx_min) or \
                        _rear_gap(ego_k, rear) <= thresholds.d_clmin:
                    active.add("e")
                    break

        if check_g:
            tgt = next((s for s in others_k if s.id == report_prev.overtake_target_id), None)
            if tgt is not None and ego_k.vx < tgt.vx + thresholds.dv_ot:
                active.add("g")

    if check_f and report_prev.line_enter_time is not None \
            and (t - report_prev.line_enter_time) > thresholds.t_max_cl:
        active.add("f")

    return active


@dataclass(frozen=True)
class ReferenceSample:
    """One sample of the motion planner's initial reference."""

    x: float
    y: float
    vx: float
    vy: float = 0.0

    def as_state(self, template: VehicleState) -> VehicleState:
        return replace(template, x=self.x, y=self.y, vx=max(self.vx, 0.0),
                       vy=self.vy, yaw=0.0, yaw_rate=0.0)


class ViolationMonitor:
    """Stateless-per-step monitor: (inputs, previous report) -> new report.

    ``horizon`` steps of ``dt`` are predicted and scanned for violations;
    audits of recorded data typically use ``horizon=1`` (no lookahead).
    """

    def __init__(self, road: RoadModel, thresholds: LawThresholds,
                 horizon: int = 30, dt: float = 0.05):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.road = road
        self.thresholds = thresholds
        self.horizon = horizon
        self.dt = dt

    def step(self,
             ego: VehicleState,
             surroundings: Sequence[VehicleState],
             intent: Intent,
             initial_ref: ReferenceSample,
             t: float,
             report_prev: ViolationReport,
             plan: Callable[[float], VehicleState] | None = None) -> ViolationReport:
        road, th = self.road, self.thresholds
        lane_idx = lane_of(ego.y, road)

        # --- lane-line timer ------------------------------------------------
        if on_any_interior_line(ego, road):
            line_enter = report_prev.line_enter_time if report_prev.line_enter_time is not None else t
        else:
            line_enter = None

        # --- overtake maneuver latches --------------------------------------
        overtake_active = report_prev.overtake_active
        overtake_target = report_prev.overtake_target_id
        overtake_lane = report_prev.overtake_lane
        initial_lane = report_prev.initial_lane

        if not overtake_active and intent.kind is IntentKind.OVERTAKE:
            overtake_active = True
            overtake_target = self._pick_overtake_target(ego, surroundings)
            overtake_lane = None
            if initial_lane is None:
                initial_lane = lane_idx
        if overtake_active:
            if overtake_target is not None and all(s.id != overtake_target for s in surroundings):
                overtake_active, overtake_target, overtake_lane = False, None, None
            elif overtake_lane is None and lane_idx is not None \
                    and initial_lane is not None and lane_idx != initial_lane \
                    and line_enter is None:
                overtake_lane = lane_idx  # entry lane change completed
            elif overtake_lane is not None and lane_idx == initial_lane and line_enter is None:
                # returned to the start lane: maneuver complete
                overtake_active, overtake_target, overtake_lane = False, None, None

        effective_intent = intent
        if overtake_active and intent.kind is not IntentKind.OVERTAKE:
            effective_intent = Intent(IntentKind.OVERTAKE, report_prev.intent.since)

        # latch the starting lane when any intent first fires
        if initial_lane is None and not effective_intent.is_none:
            initial_lane = lane_idx

        working = replace(report_prev,
                          line_enter_time=line_enter,
                          initial_lane=initial_lane,
                          overtake_active=overtake_active,
                          overtake_target_id=overtake_target,
                          overtake_lane=overtake_lane)

        # --- predicate scan over the predicted horizon ----------------------
        pred_states = predict_states(ego, plan, self.horizon, self.dt)
        surroundings_per_step = [propagate_constant_velocity(surroundings, k * self.dt)
                                 for k in range(1, self.horizon + 1)]
        violated = evaluate_predicates(pred_states, surroundings_per_step, road,
                                       effective_intent, working, t, th)

        # latch the starting lane when a continuously-monitored law trips
        if initial_lane is None and violated:
            initial_lane = lane_idx

        # --- following-distance episode latch -------------------------------
        follow_gap = report_prev.follow_recovery_gap
        follow_lead = report_prev.follow_lead_id
        follow_lane = report_prev.follow_lane
        if "c" in violated:
            front = _front_target(ego, surroundings, road)
            if follow_gap is None:
                entry = th.follow_entry_distance(ego.vx)
                follow_gap = th.follow_recovery_distance(entry)
            if follow_lane is None:
                follow_lane = lane_idx
            if front is not None:
                follow_lead = front.id
        else:
            follow_gap, follow_lead, follow_lane = None, None, None

        # --- per-law phases --------------------------------------------------
        phase: dict[str, LawPhase] = {}
        ref_lane = lane_idx if lane_idx is not None else report_prev.initial_lane
        for law in ("a", "b"):
            speed_bad = law in violated
            ref_bad = False
            if ref_lane is not None:
                v_min, v_max = road.speed_band(ref_lane)
                ref_bad = initial_ref.vx < v_min if law == "a" else initial_ref.vx > v_max
            if speed_bad:
                phase[law] = LawPhase.VIOLATION
            elif ref_bad:
                phase[law] = LawPhase.DECISION_VIOLATION
            else:
                phase[law] = LawPhase.COMPLIANCE
        for law in ("c", "d", "e", "f", "g"):
            phase[law] = LawPhase.VIOLATION if law in violated else LawPhase.COMPLIANCE

        active = frozenset(law for law in LAWS
                           if phase[law] in (LawPhase.VIOLATION, LawPhase.DECISION_VIOLATION))

        # release the starting-lane latch once nothing is in flight
        if effective_intent.is_none and not active and not overtake_active:
            initial_lane = None

        return ViolationReport(active=active,
                               phase=phase,
                               line_enter_time=line_enter,
                               initial_lane=initial_lane,
                               overtake_lane=overtake_lane,
                               intent=effective_intent,
                               overtake_active=overtake_active,
                               overtake_target_id=overtake_target,
                               follow_recovery_gap=follow_gap,
                               follow_lead_id=follow_lead,
                               follow_lane=follow_lane)

    def _pick_overtake_target(self, ego: VehicleState,
                              surroundings: Sequence[VehicleState]) -> int | str | None:
        """Nearest slower lead in ego's lane: the vehicle being overtaken."""
        candidates = [s for s in surroundings
                      if s.x > ego.x and s.vx < ego.vx
                      and lane_of(s.y, self.road) == lane_of(ego.y, self.road)]
        if not candidates:
            return None
        return min(candidates, key=lambda s: s.x).id
