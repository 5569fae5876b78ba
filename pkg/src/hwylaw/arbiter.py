"""Priority assignment and conflict resolution between compliance directives.

Each law belongs to one of four restriction categories with base scores
distance 4 > road-right 3 > speed 2 > behavior 1, damped by exp(-1/2) for
laws that are armed by a trigger (lane change / overtake) rather than
monitored continuously. Priorities only matter when directives on the same
variable conflict; non-conflicting directives are merged, with constraint
intervals intersected rather than discarded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .core import Interval
from .monitor import LAW_ORDER, LAWS
from .strategy import ComplianceDirective, Variable

REFERENCE_EQ_TOL = 1e-9
INTERVAL_EMPTY_TOL = 1e-12

CATEGORY_DISTANCE = "distance"
CATEGORY_ROAD_RIGHT = "road_right"
CATEGORY_SPEED = "speed"
CATEGORY_BEHAVIOR = "behavior"


@dataclass(frozen=True)
class PriorityModel:
    """Base category scores, per-law category, and per-law trigger flags."""

    base: dict[str, float] = field(default_factory=lambda: {
        CATEGORY_DISTANCE: 4.0,
        CATEGORY_ROAD_RIGHT: 3.0,
        CATEGORY_SPEED: 2.0,
        CATEGORY_BEHAVIOR: 1.0,
    })
    category_of: dict[str, str] = field(default_factory=lambda: {
        "a": CATEGORY_SPEED, "b": CATEGORY_SPEED,
        "c": CATEGORY_DISTANCE,
        "d": CATEGORY_ROAD_RIGHT, "e": CATEGORY_ROAD_RIGHT,
        "f": CATEGORY_BEHAVIOR,
        "g": CATEGORY_SPEED,
    })
    # speed and following distance are always monitored (no trigger)
    trigger_flag: dict[str, int] = field(default_factory=lambda: {
        "a": 0, "b": 0, "c": 0, "d": 1, "e": 1, "f": 1, "g": 1,
    })


DEFAULT_PRIORITIES = PriorityModel()


def priority_of(law: str, model: PriorityModel = DEFAULT_PRIORITIES) -> float:
    """Priority score: base(category) * exp(-trigger/2)."""
    if law not in LAW_ORDER:
        raise ValueError(f"unknown law {law!r}")
    return model.base[model.category_of[law]] * math.exp(-model.trigger_flag[law] / 2.0)


@dataclass(frozen=True)
class ResolvedPlan:
    """Arbitrated per-variable references and constraints for the controller."""

    speed_ref: float | None = None
    speed_cons: Interval | None = None
    lat_ref: float | None = None
    lat_cons: Interval | None = None
    winners: dict[Variable, str] = field(default_factory=dict)

    @property
    def is_empty(self) -> bool:
        return (self.speed_ref is None and self.speed_cons is None
                and self.lat_ref is None and self.lat_cons is None)


def _conflicts(ref: float | None, cons: Interval | None,
               directive: ComplianceDirective) -> bool:
    """Would merging `directive` into the partial (ref, cons) plan conflict?"""
    d_ref, d_cons = directive.reference, directive.constraint
    if ref is not None and d_ref is not None and abs(ref - d_ref) > REFERENCE_EQ_TOL:
        return True
    if cons is not None and d_cons is not None \
            and cons.intersect(d_cons, INTERVAL_EMPTY_TOL) is None:
        return True
    if ref is not None and d_cons is not None and not d_cons.contains(ref):
        return True
    if d_ref is not None and cons is not None and not cons.contains(d_ref):
        return True
    return False


def resolve(directives: list[ComplianceDirective],
            model: PriorityModel = DEFAULT_PRIORITIES) -> ResolvedPlan:
    """Merge directives per variable, dropping conflicting lower-priority ones.

    Within each variable the directives are visited from highest priority to
    lowest (ties broken by fixed law order a..g). The first directive seeds
    the plan; each later one is merged if compatible (intersecting the
    constraints, keeping the unique reference) and dropped otherwise, so a
    strictly lower-priority conflicting directive can never alter the result.
    """
    plan_fields: dict[Variable, tuple[float | None, Interval | None, str | None]] = {
        Variable.SPEED: (None, None, None),
        Variable.LATERAL: (None, None, None),
    }

    for variable in (Variable.SPEED, Variable.LATERAL):
        group = [d for d in directives if d.variable is variable]
        group.sort(key=lambda d: (-priority_of(d.source, model),
                                  LAW_ORDER[d.source],
                                  d.reference is None))
        ref: float | None = None
        cons: Interval | None = None
        winner: str | None = None
        for d in group:
            if _conflicts(ref, cons, d):
                continue
            if winner is None:
                winner = d.source
            if ref is None:
                ref = d.reference
            if d.constraint is not None:
                cons = d.constraint if cons is None else cons.intersect(d.constraint)
        plan_fields[variable] = (ref, cons, winner)

    speed_ref, speed_cons, speed_winner = plan_fields[Variable.SPEED]
    lat_ref, lat_cons, lat_winner = plan_fields[Variable.LATERAL]
    winners = {}
    if speed_winner is not None:
        winners[Variable.SPEED] = speed_winner
    if lat_winner is not None:
        winners[Variable.LATERAL] = lat_winner
    return ResolvedPlan(speed_ref=speed_ref, speed_cons=speed_cons,
                        lat_ref=lat_ref, lat_cons=lat_cons, winners=winners)
