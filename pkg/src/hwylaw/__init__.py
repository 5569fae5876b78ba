"""Highway traffic-law compliance toolkit.

Monitors the seven basic highway violation types, generates compliance
reference speeds / lateral positions and hard constraints, arbitrates
conflicts by law priority, and tracks the result with a constrained linear
MPC inside a deterministic closed-loop simulator.
"""

from .core import (
    FAST_FOLLOW_SPEED,
    Interval,
    Lane,
    LawThresholds,
    RoadModel,
    VehicleState,
    kmh,
    lane_of,
    longitudinal_gap,
    overlaps_lane_line,
    ttcx,
    uniform_road,
)
from .monitor import (
    LAWS,
    Intent,
    IntentKind,
    LawPhase,
    ReferenceSample,
    ViolationMonitor,
    ViolationReport,
    detect_intent,
    evaluate_predicates,
    predict_states,
)
from .strategy import (
    ComplianceDirective,
    ConfigurationError,
    DirectiveContext,
    FollowingGapContext,
    Variable,
    following_reference_speed,
    generate_directives,
    make_following_context,
)
from .arbiter import PriorityModel, ResolvedPlan, priority_of, resolve
from .mpc import MpcConfig, MpcController, VehicleParams, build_qp, linearize

__version__ = "0.1.0"
