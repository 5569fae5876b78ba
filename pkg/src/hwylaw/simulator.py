"""Deterministic closed-loop simulator for the compliance stack.

One ego vehicle runs intent detection -> violation monitoring -> directive
generation -> priority arbitration -> MPC tracking each tick, while the
surrounding vehicles follow scripts or replayed tracks (non-reactive). The
ego plant uses the same discretized model as the controller, so a run is a
pure function of the scenario. Every frame is classified as compliant,
compliant-only-under-intervention, or an active/passive violation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .arbiter import ResolvedPlan, resolve
from .core import (
    LawThresholds,
    RoadModel,
    VehicleState,
    lane_of,
    longitudinal_gap,
    on_any_interior_line,
    ttcx,
)
from .monitor import (
    LAWS,
    Intent,
    IntentKind,
    ReferenceSample,
    ViolationMonitor,
    ViolationReport,
    detect_intent,
)
from .mpc import MpcConfig, MpcController, VehicleParams, linearize
from .strategy import (
    COMFORT_DECEL,
    DirectiveContext,
    generate_directives,
    make_following_context,
)

#: Labeling tolerance: a state this close to a legal boundary is not counted
#: as a violation frame (absorbs controller float jitter on exact bounds).
LABEL_MARGIN = 1e-6


class FrameState(enum.Enum):
    COMPLIANT = "compliant"
    ACTIVE_VIOLATION = "active_violation"
    PASSIVE_VIOLATION = "passive_violation"
    INTERVENTION = "compliance_under_intervention"


@dataclass(frozen=True)
class FrameLabel:
    t: float
    state: FrameState
    laws: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        violating = self.state in (FrameState.ACTIVE_VIOLATION, FrameState.PASSIVE_VIOLATION)
        if violating != bool(self.laws):
            raise ValueError("laws must be non-empty exactly for violation frames")


# ---------------------------------------------------------------------------
# initial-reference sources


class ReplayTrack:
    """Reference sampled from a recorded/precomputed trajectory (linear interp)."""

    def __init__(self, times: Sequence[float], xs: Sequence[float], ys: Sequence[float],
                 vxs: Sequence[float], vys: Sequence[float] | None = None):
        self.times = np.asarray(times, dtype=float)
        if self.times.size < 2 or np.any(np.diff(self.times) <= 0):
            raise ValueError("replay track needs at least two strictly increasing times")
        self.xs = np.asarray(xs, dtype=float)
        self.ys = np.asarray(ys, dtype=float)
        self.vxs = np.asarray(vxs, dtype=float)
        self.vys = (np.asarray(vys, dtype=float) if vys is not None
                    else np.gradient(self.ys, self.times))

    def sample(self, t: float) -> ReferenceSample:
        return ReferenceSample(
            x=float(np.interp(t, self.times, self.xs)),
            y=float(np.interp(t, self.times, self.ys)),
            vx=float(np.interp(t, self.times, self.vxs)),
            vy=float(np.interp(t, self.times, self.vys)),
        )


class ConstantSpeedLaneCenter:
    """Drive the center of one lane at constant speed."""

    def __init__(self, road: RoadModel, lane_index: int, speed: float, x0: float = 0.0):
        self.y = road.centerline(lane_index)
        self.speed = speed
        self.x0 = x0

    def sample(self, t: float) -> ReferenceSample:
        return ReferenceSample(x=self.x0 + self.speed * t, y=self.y, vx=self.speed, vy=0.0)


class ScriptedLaneChange:
    """Constant speed with a smooth (cosine) lane-to-lane blend in a window."""

    def __init__(self, road: RoadModel, lane_from: int, lane_to: int,
                 t_start: float, t_end: float, speed: float, x0: float = 0.0):
        if t_end <= t_start:
            raise ValueError("lane-change window must have t_end > t_start")
        self.y0 = road.centerline(lane_from)
        self.y1 = road.centerline(lane_to)
        self.t_start = t_start
        self.t_end = t_end
        self.speed = speed
        self.x0 = x0

    def sample(self, t: float) -> ReferenceSample:
        tau = min(max((t - self.t_start) / (self.t_end - self.t_start), 0.0), 1.0)
        blend = 0.5 * (1.0 - math.cos(math.pi * tau))
        y = self.y0 + (self.y1 - self.y0) * blend
        if 0.0 < tau < 1.0:
            vy = (self.y1 - self.y0) * math.pi / (2.0 * (self.t_end - self.t_start)) \
                * math.sin(math.pi * tau)
        else:
            vy = 0.0
        return ReferenceSample(x=self.x0 + self.speed * t, y=y, vx=self.speed, vy=vy)


def speed_profile_track(road: RoadModel, lane_index: int,
                        profile: Sequence[tuple[float, float]],
                        x0: float = 0.0, dt: float = 0.05,
                        duration: float | None = None) -> ReplayTrack:
    """Lane-center reference with a piecewise-linear speed profile."""
    knots_t = np.array([p[0] for p in profile], dtype=float)
    knots_v = np.array([p[1] for p in profile], dtype=float)
    end = duration if duration is not None else float(knots_t[-1])
    times = np.arange(0.0, end + dt, dt)
    vxs = np.interp(times, knots_t, knots_v)
    xs = x0 + np.concatenate([[0.0], np.cumsum(0.5 * (vxs[1:] + vxs[:-1]) * np.diff(times))])
    ys = np.full_like(times, road.centerline(lane_index))
    return ReplayTrack(times, xs, ys, vxs, np.zeros_like(times))


# ---------------------------------------------------------------------------
# surrounding-vehicle sources


@dataclass(frozen=True)
class ScriptSegment:
    """Piecewise-constant acceleration, optionally steering to another lane."""

    until: float
    ax: float = 0.0
    lane: int | None = None


@dataclass(frozen=True)
class ScriptedVehicle:
    init: VehicleState
    segments: tuple[ScriptSegment, ...] = ()
    lateral_speed: float = 1.5

    def compile(self, n_ticks: int, dt: float, road: RoadModel) -> list[VehicleState | None]:
        states: list[VehicleState | None] = []
        x, y, vx = self.init.x, self.init.y, self.init.vx
        for k in range(n_ticks):
            t = k * dt
            seg = next((s for s in self.segments if t < s.until), None)
            ax = seg.ax if seg else 0.0
            target_y = road.centerline(seg.lane) if seg and seg.lane is not None else y
            dy = target_y - y
            step_y = math.copysign(min(abs(dy), self.lateral_speed * dt), dy) if dy else 0.0
            vy = step_y / dt
            states.append(replace(self.init, x=x, y=y, vx=vx, vy=vy))
            x += vx * dt + 0.5 * ax * dt * dt
            vx = max(vx + ax * dt, 0.0)
            y += step_y
        return states


@dataclass(frozen=True)
class ReplayVehicle:
    """A recorded track; the vehicle is absent outside its time window."""

    vid: int | str
    times: tuple[float, ...]
    xs: tuple[float, ...]
    ys: tuple[float, ...]
    vxs: tuple[float, ...]
    vys: tuple[float, ...]
    length: float = 4.0
    width: float = 1.8

    def compile(self, n_ticks: int, dt: float, road: RoadModel) -> list[VehicleState | None]:
        times = np.asarray(self.times)
        states: list[VehicleState | None] = []
        for k in range(n_ticks):
            t = k * dt
            if t < times[0] - 1e-9 or t > times[-1] + 1e-9:
                states.append(None)
                continue
            states.append(VehicleState(
                id=self.vid,
                x=float(np.interp(t, times, self.xs)),
                y=float(np.interp(t, times, self.ys)),
                vx=max(float(np.interp(t, times, self.vxs)), 0.0),
                vy=float(np.interp(t, times, self.vys)),
                length=self.length, width=self.width))
        return states


@dataclass(frozen=True)
class IntentWindow:
    start: float
    end: float
    kind: IntentKind


@dataclass
class Scenario:
    """Everything a run needs; a (scenario, seed) pair fixes the log exactly."""

    name: str
    road: RoadModel
    ego_init: VehicleState
    reference: object                 # initial-reference source with .sample(t)
    duration: float
    surroundings: list = field(default_factory=list)
    thresholds: LawThresholds = field(default_factory=LawThresholds)
    dt: float = 0.05
    seed: int = 0
    intents: list[IntentWindow] | None = None   # None: infer from ego motion
    mpc: MpcConfig = field(default_factory=MpcConfig)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    disable_compliance: bool = False

    def __post_init__(self) -> None:
        if self.duration <= 0 and self.n_ticks > 0:
            raise ValueError("duration must be positive")
        if lane_of(self.ego_init.y, self.road) is None:
            raise ValueError("ego must start on the road")

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration / self.dt))

    def external_intent_at(self, t: float) -> Intent | None:
        if self.intents is None:
            return None
        for w in self.intents:
            if w.start <= t < w.end:
                return Intent(w.kind, since=w.start)
        return Intent()


@dataclass
class FrameRecord:
    t: float
    ego: VehicleState
    intent: str
    monitor_active: frozenset[str]
    phase_a: str
    phase_b: str
    label: FrameLabel
    cf_laws: frozenset[str]
    speed_ref: float | None
    speed_lo: float | None
    speed_hi: float | None
    lat_ref: float | None
    lat_lo: float | None
    lat_hi: float | None
    winner_speed: str | None
    winner_lat: str | None
    u_force: float
    u_steer: float
    qp_objective: float
    max_slack: float
    solver_fallback: bool
    front_id: int | str | None
    front_gap: float | None
    on_line: bool


@dataclass
class SimLog:
    scenario_name: str
    dt: float
    frames: list[FrameRecord] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)
    completed: bool = True

    def label_counts(self) -> dict[FrameState, int]:
        counts = {state: 0 for state in FrameState}
        for fr in self.frames:
            counts[fr.label.state] += 1
        return counts

    def law_histogram(self) -> dict[str, int]:
        hist = {law: 0 for law in LAWS}
        for fr in self.frames:
            for law in fr.label.laws:
                hist[law] += 1
        return hist

    def summary(self) -> dict:
        counts = self.label_counts()
        total = len(self.frames)
        rates = {state.value: (counts[state] / total if total else 0.0)
                 for state in FrameState}
        return {
            "scenario": self.scenario_name,
            "frames": total,
            "dt": self.dt,
            "counts": {state.value: counts[state] for state in FrameState},
            "rates": rates,
            "law_frames": self.law_histogram(),
            "completed": self.completed,
            "diagnostics": list(self.diagnostics),
        }


@dataclass
class SuiteStats:
    compliance_rate: float
    active_rate: float
    passive_rate: float
    intervention_rate: float
    total_frames: int
    law_frames: dict[str, int]
    empty: bool = False

    def as_dict(self) -> dict:
        return {
            "compliance_rate": self.compliance_rate,
            "active_rate": self.active_rate,
            "passive_rate": self.passive_rate,
            "intervention_rate": self.intervention_rate,
            "total_frames": self.total_frames,
            "law_frames": self.law_frames,
            "empty": self.empty,
        }


def aggregate_stats(logs: Sequence[SimLog]) -> SuiteStats:
    """Frame-weighted label proportions over a batch of runs."""
    counts = {state: 0 for state in FrameState}
    law_frames = {law: 0 for law in LAWS}
    total = 0
    for log in logs:
        for state, n in log.label_counts().items():
            counts[state] += n
        for law, n in log.law_histogram().items():
            law_frames[law] += n
        total += len(log.frames)
    if total == 0:
        return SuiteStats(0.0, 0.0, 0.0, 0.0, 0, law_frames, empty=True)
    return SuiteStats(
        compliance_rate=counts[FrameState.COMPLIANT] / total,
        active_rate=counts[FrameState.ACTIVE_VIOLATION] / total,
        passive_rate=counts[FrameState.PASSIVE_VIOLATION] / total,
        intervention_rate=counts[FrameState.INTERVENTION] / total,
        total_frames=total,
        law_frames=law_frames,
    )


# ---------------------------------------------------------------------------
# frame labeling


def instantaneous_violations(ego: VehicleState,
                             others: Sequence[VehicleState],
                             road: RoadModel,
                             report: ViolationReport,
                             thresholds: LawThresholds,
                             t: float,
                             margin: float = LABEL_MARGIN) -> set[str]:
    """Laws the CURRENT state actually violates, for frame statistics.

    Unlike the monitor this looks one state only (no prediction, no
    following-distance hysteresis), shrinks every bound by ``margin`` so a
    state sitting numerically on a legal boundary counts as compliant, and
    counts the lane-entry laws (d/e/g) only while the footprint is actually
    crossing a line, not merely when a crossing is intended.
    """
    th = thresholds
    out: set[str] = set()
    lane_idx = lane_of(ego.y, road)
    if lane_idx is not None:
        v_min, v_max = road.speed_band(lane_idx)
        if ego.vx < v_min - margin:
            out.add("a")
        if ego.vx > v_max + margin:
            out.add("b")

    front = None
    if lane_idx is not None:
        fronts = [o for o in others if o.x > ego.x and lane_of(o.y, road) == lane_idx]
        front = min(fronts, key=lambda o: o.x) if fronts else None
    if front is not None:
        gap = longitudinal_gap(ego, front)
        if gap < th.follow_entry_distance(ego.vx) - margin:
            out.add("c")

    straddling = on_any_interior_line(ego, road)
    intent = report.intent

    def rear_lane_unsafe(target_lane: int) -> bool:
        for o in others:
            if o.x > ego.x or lane_of(o.y, road) != target_lane:
                continue
            gap = max(longitudinal_gap(o, ego), 0.0)
            tc = ttcx(ego, o)
            if (tc is not None and tc <= th.ttcx_min - margin) or gap <= th.d_clmin - margin:
                return True
        return False

    if straddling and lane_idx is not None:
        going_left = intent.kind is IntentKind.CHANGE_LEFT or (
            intent.kind is IntentKind.OVERTAKE and report.overtake_lane is None)
        going_right = intent.kind is IntentKind.CHANGE_RIGHT or (
            intent.kind is IntentKind.OVERTAKE and report.overtake_lane is not None)
        if going_left and lane_idx + 1 < len(road.lanes) and rear_lane_unsafe(lane_idx + 1):
            out.add("d")
        if going_right and lane_idx >= 1 and rear_lane_unsafe(lane_idx - 1):
            out.add("e")

    if not intent.is_none and report.line_enter_time is not None \
            and (t - report.line_enter_time) > th.t_max_cl + margin:
        out.add("f")

    if report.overtake_active and report.overtake_lane is not None \
            and report.overtake_target_id is not None and straddling \
            and report.initial_lane is not None:
        tgt = next((o for o in others if o.id == report.overtake_target_id), None)
        returning = (road.centerline(report.initial_lane) - ego.y) * ego.vy > 0
        if tgt is not None and returning and ego.vx < tgt.vx + th.dv_ot - margin:
            out.add("g")
    return out


@dataclass
class _ClassifierState:
    """Episode memory: onset classification latches while a law stays active."""

    episode_passive: dict[str, bool] = field(default_factory=dict)
    prev_actual: set[str] = field(default_factory=set)
    prev_front_id: int | str | None = None
    prev_straddling: bool = False
    prev_speeds: dict = field(default_factory=dict)


def _classify_frame(state: _ClassifierState,
                    frame_index: int,
                    t: float,
                    ego: VehicleState,
                    others: Sequence[VehicleState],
                    road: RoadModel,
                    actual: set[str],
                    cf_actual: set[str],
                    plan: ResolvedPlan | None,
                    thresholds: LawThresholds,
                    monitor_horizon_s: float,
                    dt: float) -> FrameLabel:
    """Label one frame and update the episode latches.

    A violation episode is passive when its onset was exogenous: the first
    frame of a run, a cut-in or hard-braking lead, a closing speed too high
    to absorb at comfortable deceleration within the monitoring horizon, a
    threat that emerged mid-crossing, or a speed commanded out of band by a
    higher-priority rule. Everything else is an active violation.
    """
    lane_idx = lane_of(ego.y, road)
    front = None
    if lane_idx is not None:
        fronts = [o for o in others if o.x > ego.x and lane_of(o.y, road) == lane_idx]
        front = min(fronts, key=lambda o: o.x) if fronts else None

    for law in actual:
        if law in state.prev_actual and law in state.episode_passive:
            continue
        passive = frame_index == 0
        if not passive and law == "c" and front is not None:
            if front.id != state.prev_front_id:
                passive = True    # a different vehicle became the lead (cut-in)
            else:
                prev_v = state.prev_speeds.get(front.id)
                accel = (front.vx - prev_v) / dt if prev_v is not None else 0.0
                if accel <= -COMFORT_DECEL:
                    passive = True
                closing = ego.vx - front.vx
                if closing > 2.0 * COMFORT_DECEL * monitor_horizon_s:
                    passive = True   # unrecoverable at comfort decel with one horizon of warning
        if not passive and law in ("a", "b") and plan is not None \
                and plan.speed_ref is not None and lane_idx is not None:
            v_min, v_max = road.speed_band(lane_idx)
            commanded_out = plan.speed_ref < v_min if law == "a" else plan.speed_ref > v_max
            if commanded_out:
                passive = True       # sacrificed to a higher-priority rule
        if not passive and law in ("d", "e") and state.prev_straddling \
                and law not in state.prev_actual:
            passive = True           # threat emerged after the crossing was committed
        state.episode_passive[law] = passive

    for law in list(state.episode_passive):
        if law not in actual:
            del state.episode_passive[law]

    state.prev_actual = set(actual)
    state.prev_front_id = front.id if front is not None else None
    state.prev_straddling = on_any_interior_line(ego, road)
    state.prev_speeds = {o.id: o.vx for o in others}

    if actual:
        any_active = any(not state.episode_passive.get(law, True) for law in actual)
        frame_state = FrameState.ACTIVE_VIOLATION if any_active else FrameState.PASSIVE_VIOLATION
        return FrameLabel(t, frame_state, frozenset(actual))
    if cf_actual:
        return FrameLabel(t, FrameState.INTERVENTION)
    return FrameLabel(t, FrameState.COMPLIANT)


# ---------------------------------------------------------------------------
# the closed loop


def _state_vector(ego: VehicleState) -> np.ndarray:
    return np.array([ego.vx, ego.vy, ego.yaw_rate, ego.yaw, ego.x, ego.y])


def _vehicle_from_vector(x: np.ndarray, template: VehicleState) -> VehicleState:
    return replace(template, vx=max(float(x[0]), 0.0), vy=float(x[1]),
                   yaw_rate=float(x[2]), yaw=float(x[3]),
                   x=float(x[4]), y=float(x[5]))


def run(scenario: Scenario) -> SimLog:
    """Run one scenario to completion; identical scenarios give identical logs."""
    road = scenario.road
    th = scenario.thresholds
    dt = scenario.dt
    n_ticks = scenario.n_ticks
    cfg = replace(scenario.mpc, dt=dt)
    log = SimLog(scenario_name=scenario.name, dt=dt)
    if n_ticks == 0:
        return log

    tracks = [src.compile(n_ticks, dt, road) for src in scenario.surroundings]
    monitor = ViolationMonitor(road, th, horizon=cfg.n_pred, dt=dt)
    cf_monitor = ViolationMonitor(road, th, horizon=cfg.n_pred, dt=dt)
    controller = MpcController(cfg, scenario.vehicle)
    ref = scenario.reference

    x = _state_vector(scenario.ego_init)
    u = np.zeros(2)
    report = ViolationReport.empty()
    cf_report = ViolationReport.empty()
    classifier = _ClassifierState()
    horizon_s = cfg.n_pred * dt

    for k in range(n_ticks):
        t = k * dt
        others = [track[k] for track in tracks if track[k] is not None]
        ego = _vehicle_from_vector(x, scenario.ego_init)

        if lane_of(ego.y, road) is None:
            log.diagnostics.append(f"t={t:.2f}: ego left the road at y={ego.y:.2f}")
            log.completed = False
            break

        ref_now = ref.sample(t)
        external = scenario.external_intent_at(t)
        intent = detect_intent(ego, others, th, external=external, road=road,
                               t=t, prev=report.intent)
        report = monitor.step(ego, others, intent, ref_now, t, report)

        # counterfactual chain: the uncorrected initial reference as the ego
        cf_ego = ref_now.as_state(scenario.ego_init)
        cf_intent = detect_intent(cf_ego, others, th, external=external, road=road,
                                  t=t, prev=cf_report.intent)
        cf_plan = lambda tau: ref.sample(t + tau).as_state(scenario.ego_init)
        cf_report = cf_monitor.step(cf_ego, others, cf_intent, ref_now, t,
                                    cf_report, plan=cf_plan)

        plan = None
        front = None
        front_gap = None
        diag_objective = float("nan")
        diag_slack = 0.0
        diag_fallback = False
        if not scenario.disable_compliance:
            lane_idx = lane_of(ego.y, road)
            fronts = [o for o in others if o.x > ego.x and lane_of(o.y, road) == lane_idx]
            front = min(fronts, key=lambda o: o.x) if fronts else None
            front_gap = longitudinal_gap(ego, front) if front is not None else None
            following = None
            if report.phase["c"].value == "violation" and front is not None \
                    and report.follow_recovery_gap is not None:
                following = make_following_context(ego.vx, front.vx, front_gap,
                                                   report.follow_recovery_gap)
            v_tgt = None
            if report.overtake_target_id is not None:
                tgt = next((o for o in others if o.id == report.overtake_target_id), None)
                v_tgt = tgt.vx if tgt is not None else None
            ctx = DirectiveContext(road=road,
                                   current_lane=lane_idx,
                                   ego_width=ego.width,
                                   initial_ref=ref_now,
                                   initial_lane=report.initial_lane,
                                   follow_lane=report.follow_lane,
                                   overtake_lane=report.overtake_lane,
                                   v_tgt_overtaken=v_tgt,
                                   following=following)
            directives = generate_directives(report, ctx, th)
            plan = resolve(directives)

            times = t + dt * np.arange(1, cfg.n_pred + 1)
            samples = [ref.sample(float(ti)) for ti in times]
            ref_speed = np.array([s.vx for s in samples])
            ref_lat = np.array([s.y for s in samples])
            u, diag = controller.step(plan, ref_speed, ref_lat, x, u)
            diag_objective = diag.objective
            diag_slack = diag.max_slack
            diag_fallback = diag.fallback
        else:
            fronts = [o for o in others
                      if o.x > ego.x and lane_of(o.y, road) == lane_of(ego.y, road)]
            front = min(fronts, key=lambda o: o.x) if fronts else None
            front_gap = longitudinal_gap(ego, front) if front is not None else None

        actual = instantaneous_violations(ego, others, road, report, th, t)
        cf_actual = instantaneous_violations(cf_ego, others, road, cf_report, th, t)
        label = _classify_frame(classifier, k, t, ego, others, road, actual,
                                cf_actual, plan, th, horizon_s, dt)

        log.frames.append(FrameRecord(
            t=t, ego=ego, intent=report.intent.kind.value,
            monitor_active=report.active,
            phase_a=report.phase["a"].value, phase_b=report.phase["b"].value,
            label=label, cf_laws=frozenset(cf_actual),
            speed_ref=plan.speed_ref if plan else None,
            speed_lo=plan.speed_cons.lo if plan and plan.speed_cons else None,
            speed_hi=plan.speed_cons.hi if plan and plan.speed_cons else None,
            lat_ref=plan.lat_ref if plan else None,
            lat_lo=plan.lat_cons.lo if plan and plan.lat_cons else None,
            lat_hi=plan.lat_cons.hi if plan and plan.lat_cons else None,
            winner_speed=(plan.winners.get(archVariableSpeed) if plan else None),
            winner_lat=None,
            u_force=float(u[0]), u_steer=float(u[1]),
            qp_objective=diag_objective, max_slack=diag_slack,
            solver_fallback=diag_fallback,
            front_id=front.id if front is not None else None,
            front_gap=front_gap,
            on_line=on_any_interior_line(ego, road),
        ))

        # advance the plant
        if scenario.disable_compliance:
            nxt = ref.sample(t + dt)
            x = np.array([max(nxt.vx, 0.0), nxt.vy, 0.0, 0.0, nxt.x, nxt.y])
        else:
            a_d, b_d, _, _ = linearize(scenario.vehicle, float(x[0]), dt, cfg.v_eps)
            x = a_d @ x + b_d @ u
            x[0] = max(x[0], 0.0)

    return log
