"""Constrained linear MPC over a discretized single-track vehicle model.

State x = [vx, vy, yaw_rate, yaw, X, Y], input u = [FxT (longitudinal
force), delta_f (front steer)], tracked outputs y = [vx, yaw, Y]. The cost
trades tracking error against input increments over a control horizon; the
compliance layer's speed/lateral constraints enter as output bounds that
are softened with heavily penalized slack variables (a momentary cut-in can
make a hard output bound infeasible), while input and input-rate bounds
stay hard.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Interval
from .arbiter import ResolvedPlan
from .qp import Qp, QpError, QpSolution, solve_qp

NX = 6
NU = 2
WIDE_BOUND = 1e6


@dataclass(frozen=True)
class VehicleParams:
    """Single-track model parameters (engineering defaults, mid-size sedan)."""

    mass: float = 1500.0
    yaw_inertia: float = 2500.0
    cornering_stiffness_front: float = 6.0e4
    cornering_stiffness_rear: float = 6.0e4
    dist_cg_front: float = 1.2
    dist_cg_rear: float = 1.6

    def __post_init__(self) -> None:
        for name in ("mass", "yaw_inertia", "cornering_stiffness_front",
                     "cornering_stiffness_rear", "dist_cg_front", "dist_cg_rear"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class MpcConfig:
    """Horizons, weights, and actuator limits.

    Weights are tuning values: speed error 1, heading 10, lateral 5,
    force increment 1e-6, steer increment 10, slack 1e4. Input bounds are
    +/- accel_limit * mass on force and +/- steer_limit on steering; rate
    bounds are per-second limits scaled by dt.
    """

    n_pred: int = 30
    n_ctrl: int = 5
    dt: float = 0.05
    w_v: float = 1.0
    w_phi: float = 10.0
    w_y: float = 5.0
    w_force: float = 1e-6
    w_steer: float = 10.0
    slack_penalty: float = 1e4
    accel_limit: float = 4.0          # m/s^2
    steer_limit: float = 0.1          # rad
    accel_rate_limit: float = 10.0    # m/s^3
    steer_rate_limit: float = 0.4     # rad/s
    v_eps: float = 1.0                # low-speed singularity guard

    def __post_init__(self) -> None:
        if not (self.n_pred >= self.n_ctrl >= 1):
            raise ValueError("need n_pred >= n_ctrl >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        weights = (self.w_v, self.w_phi, self.w_y, self.w_force, self.w_steer)
        if any(w < 0 for w in weights):
            raise ValueError("weights must be non-negative")
        if self.w_v <= 0 and self.w_phi <= 0 and self.w_y <= 0:
            raise ValueError("at least one output weight must be positive")
        if self.slack_penalty <= 0:
            raise ValueError("slack penalty must be positive")
        if self.accel_limit <= 0 or self.steer_limit <= 0 \
                or self.accel_rate_limit <= 0 or self.steer_rate_limit <= 0:
            raise ValueError("actuator limits must be positive")

    def input_bounds(self, params: VehicleParams) -> tuple[np.ndarray, np.ndarray]:
        hi = np.array([params.mass * self.accel_limit, self.steer_limit])
        return -hi, hi

    def rate_bounds(self, params: VehicleParams) -> tuple[np.ndarray, np.ndarray]:
        hi = np.array([params.mass * self.accel_rate_limit * self.dt,
                       self.steer_rate_limit * self.dt])
        return -hi, hi


def linearize(params: VehicleParams, operating_vx: float, dt: float,
              v_eps: float = 1.0) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Discrete model (A, B, C, C_s) at the given operating speed.

    Lateral dynamics are the classic linear single-track equations in
    (vy, yaw_rate); longitudinally vx integrates FxT/m; position kinematics
    use the small-angle forms Xdot = vx, Ydot = vy + vx * yaw. Forward-Euler
    discretization at dt. Speeds below v_eps are clamped before dividing.
    """
    vbar = max(operating_vx, v_eps)
    m = params.mass
    iz = params.yaw_inertia
    cf = params.cornering_stiffness_front
    cr = params.cornering_stiffness_rear
    lf = params.dist_cg_front
    lr = params.dist_cg_rear

    a_cont = np.zeros((NX, NX))
    a_cont[1, 1] = -(cf + cr) / (m * vbar)
    a_cont[1, 2] = (cr * lr - cf * lf) / (m * vbar) - vbar
    a_cont[2, 1] = (cr * lr - cf * lf) / (iz * vbar)
    a_cont[2, 2] = -(cf * lf ** 2 + cr * lr ** 2) / (iz * vbar)
    a_cont[3, 2] = 1.0
    a_cont[4, 0] = 1.0
    a_cont[5, 1] = 1.0
    a_cont[5, 3] = vbar

    b_cont = np.zeros((NX, NU))
    b_cont[0, 0] = 1.0 / m
    b_cont[1, 1] = cf / m
    b_cont[2, 1] = cf * lf / iz

    a_d = np.eye(NX) + dt * a_cont
    b_d = dt * b_cont
    c = np.zeros((3, NX))
    c[0, 0] = 1.0   # vx
    c[1, 3] = 1.0   # yaw
    c[2, 5] = 1.0   # Y
    c_s = np.zeros((2, NX))
    c_s[0, 0] = 1.0  # speed
    c_s[1, 5] = 1.0  # lateral position
    return a_d, b_d, c, c_s


@dataclass
class MpcProblem:
    """One tick's data: model, per-step output targets, and output bounds."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    c_s: np.ndarray
    y_des: np.ndarray            # (n_pred, 3): [v, yaw, Y] targets
    y_s_min: np.ndarray          # (n_pred, 2) lower output bounds
    y_s_max: np.ndarray          # (n_pred, 2) upper output bounds


@dataclass
class QpStructure:
    """Built QP plus the index bookkeeping needed to read the solution."""

    qp: Qp
    u_prev: np.ndarray
    n_ctrl: int
    slack_channels: list[tuple[int, str]]   # (hard-output channel, "lo"/"hi")

    @property
    def n_du(self) -> int:
        return self.n_ctrl * NU

    def first_move(self, z: np.ndarray) -> np.ndarray:
        return self.u_prev + z[:NU]

    def slacks(self, z: np.ndarray) -> dict[str, float]:
        names = {0: "speed", 1: "lateral"}
        return {f"{names[ch]}_{side}": float(z[self.n_du + i])
                for i, (ch, side) in enumerate(self.slack_channels)}


def _prediction_matrices(a: np.ndarray, b: np.ndarray, sel: np.ndarray,
                         n_pred: int, n_ctrl: int,
                         x0: np.ndarray, u_prev: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Outputs over the horizon as y_flat = y_free + G @ dU.

    Inputs are u_prev plus the accumulated increments, held constant after
    the control horizon.
    """
    ny = sel.shape[0]
    y_free = np.zeros(n_pred * ny)
    x = x0.copy()
    for k in range(n_pred):
        x = a @ x + b @ u_prev
        y_free[k * ny:(k + 1) * ny] = sel @ x

    g = np.zeros((n_pred * ny, n_ctrl * NU))
    for j in range(n_ctrl):
        for comp in range(NU):
            x = np.zeros(NX)
            u_unit = np.zeros(NU)
            col = j * NU + comp
            for k in range(n_pred):
                if k >= j:
                    u_unit[comp] = 1.0
                x = a @ x + b @ u_unit
                g[k * ny:(k + 1) * ny, col] = sel @ x
    return y_free, g


def build_qp(problem: MpcProblem, cfg: MpcConfig, x0: np.ndarray,
             u_prev: np.ndarray, params: VehicleParams) -> QpStructure:
    """Condensed QP over input increments and output-bound slack variables.

    Output bounds are soft (one slack per hard-output channel and side,
    shared across the horizon, entering the cost quadratically); input
    magnitude and rate bounds are hard rows.
    """
    n_pred, n_ctrl = cfg.n_pred, cfg.n_ctrl
    x0 = np.asarray(x0, dtype=float).reshape(NX)
    u_prev = np.asarray(u_prev, dtype=float).reshape(NU)

    u_lo, u_hi = cfg.input_bounds(params)
    du_lo, du_hi = cfg.rate_bounds(params)
    if np.any(u_lo >= u_hi):
        raise ValueError("input bounds are empty (u_min >= u_max)")
    u_prev = np.clip(u_prev, u_lo, u_hi)

    y_free, g_track = _prediction_matrices(problem.a, problem.b, problem.c,
                                           n_pred, n_ctrl, x0, u_prev)
    ys_free, g_hard = _prediction_matrices(problem.a, problem.b, problem.c_s,
                                           n_pred, n_ctrl, x0, u_prev)

    q_diag = np.tile([cfg.w_v, cfg.w_phi, cfg.w_y], n_pred)
    r_diag = np.tile([cfg.w_force, cfg.w_steer], n_ctrl)
    y_err0 = y_free - problem.y_des.reshape(-1)

    # slack variables only for channels/sides with a finite bound somewhere
    slack_channels: list[tuple[int, str]] = []
    for ch in range(2):
        if np.any(problem.y_s_min[:, ch] > -WIDE_BOUND):
            slack_channels.append((ch, "lo"))
        if np.any(problem.y_s_max[:, ch] < WIDE_BOUND):
            slack_channels.append((ch, "hi"))
    n_du = n_ctrl * NU
    n_z = n_du + len(slack_channels)

    h = np.zeros((n_z, n_z))
    h[:n_du, :n_du] = 2.0 * (g_track.T * q_diag) @ g_track
    h[:n_du, :n_du] += 2.0 * np.diag(r_diag)
    for i in range(len(slack_channels)):
        h[n_du + i, n_du + i] = 2.0 * cfg.slack_penalty
    grad = np.zeros(n_z)
    grad[:n_du] = 2.0 * g_track.T @ (q_diag * y_err0)

    rows: list[np.ndarray] = []
    rhs: list[float] = []
    labels: list[str] = []

    slack_index = {key: n_du + i for i, key in enumerate(slack_channels)}
    for k in range(n_pred):
        for ch in range(2):
            lo = problem.y_s_min[k, ch]
            hi = problem.y_s_max[k, ch]
            grow = g_hard[k * 2 + ch]
            if hi < WIDE_BOUND:
                row = np.zeros(n_z)
                row[:n_du] = grow
                row[slack_index[(ch, "hi")]] = -1.0
                rows.append(row)
                rhs.append(hi - ys_free[k * 2 + ch])
                labels.append(f"out_hi[{k},{ch}]")
            if lo > -WIDE_BOUND:
                row = np.zeros(n_z)
                row[:n_du] = -grow
                row[slack_index[(ch, "lo")]] = -1.0
                rows.append(row)
                rhs.append(ys_free[k * 2 + ch] - lo)
                labels.append(f"out_lo[{k},{ch}]")
    for i in range(len(slack_channels)):
        row = np.zeros(n_z)
        row[n_du + i] = -1.0
        rows.append(row)
        rhs.append(0.0)
        labels.append(f"slack_nonneg[{i}]")

    # hard input bounds on the accumulated input, and hard rate bounds
    for j in range(n_ctrl):
        for comp in range(NU):
            acc_row = np.zeros(n_z)
            for jj in range(j + 1):
                acc_row[jj * NU + comp] = 1.0
            rows.append(acc_row.copy())
            rhs.append(u_hi[comp] - u_prev[comp])
            labels.append(f"u_hi[{j},{comp}]")
            rows.append(-acc_row)
            rhs.append(u_prev[comp] - u_lo[comp])
            labels.append(f"u_lo[{j},{comp}]")

            rate_row = np.zeros(n_z)
            rate_row[j * NU + comp] = 1.0
            rows.append(rate_row.copy())
            rhs.append(du_hi[comp])
            labels.append(f"du_hi[{j},{comp}]")
            rows.append(-rate_row)
            rhs.append(-du_lo[comp])
            labels.append(f"du_lo[{j},{comp}]")

    a_ineq = np.array(rows) if rows else np.zeros((0, n_z))
    b_ineq = np.array(rhs)

    # feasible start: zero increments, slacks covering any current violation
    z0 = np.zeros(n_z)
    for i, (ch, side) in enumerate(slack_channels):
        ys = ys_free.reshape(n_pred, 2)[:, ch]
        if side == "hi":
            need = np.max(ys - problem.y_s_max[:, ch])
        else:
            need = np.max(problem.y_s_min[:, ch] - ys)
        z0[n_du + i] = max(need, 0.0) + 1.0

    qp = Qp(h=h, g=grad, a_ineq=a_ineq, b_ineq=b_ineq, row_labels=labels, z0=z0)
    return QpStructure(qp=qp, u_prev=u_prev, n_ctrl=n_ctrl, slack_channels=slack_channels)


@dataclass
class MpcDiagnostics:
    objective: float
    iterations: int
    active_rows: list[str]
    slacks: dict[str, float]
    fallback: bool = False

    @property
    def max_slack(self) -> float:
        return max(self.slacks.values(), default=0.0)


def solve(structure: QpStructure) -> tuple[np.ndarray, MpcDiagnostics]:
    """Solve the built QP and return the first control move (receding horizon)."""
    sol = solve_qp(structure.qp)
    labels = structure.qp.row_labels
    diag = MpcDiagnostics(objective=sol.objective,
                          iterations=sol.iterations,
                          active_rows=[labels[i] for i in sol.active_set],
                          slacks=structure.slacks(sol.z))
    return structure.first_move(sol.z), diag


class MpcController:
    """Receding-horizon tracker fed by the compliance layer's resolved plan."""

    def __init__(self, cfg: MpcConfig, params: VehicleParams):
        self.cfg = cfg
        self.params = params

    def step(self,
             plan: ResolvedPlan | None,
             ref_speed: np.ndarray,
             ref_lateral: np.ndarray,
             x0: np.ndarray,
             u_prev: np.ndarray) -> tuple[np.ndarray, MpcDiagnostics]:
        """One control tick.

        ``ref_speed``/``ref_lateral`` are the initial reference sampled over
        the horizon; plan entries, where present, override them and install
        output bounds. On solver failure the previous input is held (zero
        increment) and the fallback is flagged in the diagnostics.
        """
        cfg = self.cfg
        n_pred = cfg.n_pred
        ref_speed = np.asarray(ref_speed, dtype=float).reshape(n_pred)
        ref_lateral = np.asarray(ref_lateral, dtype=float).reshape(n_pred)

        y_des = np.zeros((n_pred, 3))
        y_des[:, 0] = plan.speed_ref if (plan and plan.speed_ref is not None) else ref_speed
        y_des[:, 1] = 0.0
        y_des[:, 2] = plan.lat_ref if (plan and plan.lat_ref is not None) else ref_lateral

        y_s_min = np.full((n_pred, 2), -WIDE_BOUND)
        y_s_max = np.full((n_pred, 2), WIDE_BOUND)
        if plan is not None:
            if plan.speed_cons is not None:
                y_s_min[:, 0] = plan.speed_cons.lo
                y_s_max[:, 0] = plan.speed_cons.hi
            if plan.lat_cons is not None:
                y_s_min[:, 1] = plan.lat_cons.lo
                y_s_max[:, 1] = plan.lat_cons.hi

        a, b, c, c_s = linearize(self.params, float(x0[0]), cfg.dt, cfg.v_eps)
        problem = MpcProblem(a=a, b=b, c=c, c_s=c_s, y_des=y_des,
                             y_s_min=y_s_min, y_s_max=y_s_max)
        structure = build_qp(problem, cfg, x0, u_prev, self.params)
        try:
            return solve(structure)
        except QpError:
            diag = MpcDiagnostics(objective=float("nan"), iterations=0,
                                  active_rows=[], slacks={}, fallback=True)
            return structure.u_prev.copy(), diag

    def horizon_times(self, t: float) -> np.ndarray:
        return t + self.cfg.dt * np.arange(1, self.cfg.n_pred + 1)
