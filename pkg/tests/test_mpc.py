import numpy as np
import pytest

from helpers import qp_oracle_enumerate, rk4_rollout

from hwylaw.arbiter import ResolvedPlan
from hwylaw.core import Interval
from hwylaw.mpc import (
    NU,
    NX,
    MpcConfig,
    MpcController,
    MpcProblem,
    VehicleParams,
    build_qp,
    linearize,
    solve,
)
from hwylaw.qp import Qp, QpError, solve_qp

PARAMS = VehicleParams()


def continuous_matrices(params, vbar):
    """Continuous-time single-track matrices (reference for discretization)."""
    m, iz = params.mass, params.yaw_inertia
    cf, cr = params.cornering_stiffness_front, params.cornering_stiffness_rear
    lf, lr = params.dist_cg_front, params.dist_cg_rear
    a = np.zeros((NX, NX))
    a[1, 1] = -(cf + cr) / (m * vbar)
    a[1, 2] = (cr * lr - cf * lf) / (m * vbar) - vbar
    a[2, 1] = (cr * lr - cf * lf) / (iz * vbar)
    a[2, 2] = -(cf * lf ** 2 + cr * lr ** 2) / (iz * vbar)
    a[3, 2] = 1.0
    a[4, 0] = 1.0
    a[5, 1] = 1.0
    a[5, 3] = vbar
    b = np.zeros((NX, NU))
    b[0, 0] = 1.0 / m
    b[1, 1] = cf / m
    b[2, 1] = cf * lf / iz
    return a, b


def make_problem(cfg, vbar=25.0, y_des=None, v_bounds=None, y_bounds=None):
    a, b, c, c_s = linearize(PARAMS, vbar, cfg.dt)
    n = cfg.n_pred
    if y_des is None:
        y_des = np.tile([vbar, 0.0, 1.875], (n, 1))
    y_s_min = np.full((n, 2), -1e6)
    y_s_max = np.full((n, 2), 1e6)
    if v_bounds is not None:
        y_s_min[:, 0], y_s_max[:, 0] = v_bounds
    if y_bounds is not None:
        y_s_min[:, 1], y_s_max[:, 1] = y_bounds
    return MpcProblem(a=a, b=b, c=c, c_s=c_s, y_des=np.asarray(y_des, dtype=float),
                      y_s_min=y_s_min, y_s_max=y_s_max)


# ---------------------------------------------------------------------------
# linearized model


def test_equilibrium_straight_driving():
    a, b, _, _ = linearize(PARAMS, 30.0, 0.05)
    x = np.array([30.0, 0.0, 0.0, 0.0, 0.0, 1.875])
    for _ in range(100):
        x = a @ x
    assert x[0] == pytest.approx(30.0)
    assert x[5] == pytest.approx(1.875)
    assert x[4] == pytest.approx(30.0 * 0.05 * 100)


def test_longitudinal_force_response():
    dt = 0.05
    a, b, _, _ = linearize(PARAMS, 20.0, dt)
    x = np.array([20.0, 0, 0, 0, 0, 0.0])
    x2 = a @ x + b @ np.array([PARAMS.mass * 1.0, 0.0])
    assert x2[0] == pytest.approx(20.0 + dt * 1.0)


def test_steer_step_matches_continuous_integration():
    # Euler discretization at a fine step vs RK4 of the continuous model
    dt = 1e-3
    vbar = 20.0
    a_d, b_d, _, _ = linearize(PARAMS, vbar, dt)
    u = np.array([0.0, 0.02])
    x = np.array([vbar, 0, 0, 0, 0, 0.0])
    for _ in range(int(1.0 / dt)):
        x = a_d @ x + b_d @ u
    a_c, b_c = continuous_matrices(PARAMS, vbar)
    x_ref = rk4_rollout(a_c, b_c, [vbar, 0, 0, 0, 0, 0.0], u, 1.0, 1e-4)
    assert np.max(np.abs(x - x_ref)) < 1e-3
    # steering left must raise yaw rate and lateral position
    assert x[2] > 0 and x[5] > 0


def test_low_speed_clamp():
    a_slow, _, _, _ = linearize(PARAMS, 0.1, 0.05)
    a_eps, _, _, _ = linearize(PARAMS, 1.0, 0.05)
    assert np.allclose(a_slow, a_eps)


def test_selector_shapes():
    _, _, c, c_s = linearize(PARAMS, 20.0, 0.05)
    assert c.shape == (3, NX) and c_s.shape == (2, NX)
    assert np.allclose(c @ np.arange(6.0), [0.0, 3.0, 5.0])
    assert np.allclose(c_s @ np.arange(6.0), [0.0, 5.0])


# ---------------------------------------------------------------------------
# QP construction and solve


def test_unconstrained_matches_normal_equations():
    cfg = MpcConfig(n_pred=1, n_ctrl=1, w_force=0.0, w_steer=0.0, dt=0.05)
    x0 = np.array([24.0, 0, 0, 0, 0, 1.0])
    y_des = np.array([[25.0, 0.0, 1.875]])
    problem = make_problem(cfg, y_des=y_des)
    structure = build_qp(problem, cfg, x0, np.zeros(2), PARAMS)
    # drop the input/rate rows: pure least squares
    qp = Qp(h=structure.qp.h, g=structure.qp.g,
            a_ineq=np.zeros((0, structure.qp.n)), b_ineq=np.zeros(0))
    sol = solve_qp(qp)
    w = np.sqrt([cfg.w_v, cfg.w_phi, cfg.w_y])
    g_resp = problem.c @ problem.b
    target = y_des[0] - problem.c @ (problem.a @ x0)
    du_star, *_ = np.linalg.lstsq(w[:, None] * g_resp, w * target, rcond=None)
    assert np.allclose(sol.z[:2], du_star, atol=1e-8)


def test_perfect_tracking_zero_cost():
    cfg = MpcConfig(n_pred=1, n_ctrl=1, dt=0.05)
    x0 = np.array([25.0, 0, 0, 0, 0, 1.875])
    problem = make_problem(cfg, y_des=None)
    # y_des equals the free response with u_prev = 0
    problem.y_des = (problem.c @ (problem.a @ x0)).reshape(1, 3)
    structure = build_qp(problem, cfg, x0, np.zeros(2), PARAMS)
    u, diag = solve(structure)
    assert np.allclose(u, 0.0, atol=1e-9)
    assert diag.objective == pytest.approx(0.0, abs=1e-12)


def test_speed_bound_activates():
    # upper speed bound below the tracking optimum: solution sits on the bound
    cfg = MpcConfig(n_pred=1, n_ctrl=1, dt=0.05, w_force=1e-6, slack_penalty=1e6)
    x0 = np.array([25.0, 0, 0, 0, 0, 1.875])
    bound = 25.01
    problem = make_problem(cfg, y_des=np.array([[26.0, 0.0, 1.875]]),
                           v_bounds=(-1e6, bound))
    structure = build_qp(problem, cfg, x0, np.zeros(2), PARAMS)
    u, diag = solve(structure)

    # brute force over a fine force grid with analytic optimal slack
    a, b, c, c_s = problem.a, problem.b, problem.c, problem.c_s
    du_lo, du_hi = cfg.rate_bounds(PARAMS)
    best, best_cost = None, np.inf
    for f in np.linspace(du_lo[0], du_hi[0], 20001):
        du = np.array([f, 0.0])
        x1 = a @ x0 + b @ du
        y = c @ x1
        err = y - problem.y_des[0]
        cost = cfg.w_v * err[0] ** 2 + cfg.w_phi * err[1] ** 2 + cfg.w_y * err[2] ** 2
        cost += cfg.w_force * f ** 2
        s = max(0.0, (c_s @ x1)[0] - bound)
        cost += cfg.slack_penalty * s ** 2
        if cost < best_cost:
            best_cost, best = cost, du
    assert abs(u[0] - best[0]) < (du_hi[0] - du_lo[0]) / 20000 * 4
    v_next = (a @ x0 + b @ u)[0]
    assert v_next <= bound + 1e-3   # on the bound within slack tolerance


def test_gradient_matches_finite_differences():
    cfg = MpcConfig(n_pred=3, n_ctrl=2, dt=0.05)
    x0 = np.array([24.0, 0.1, 0.01, 0.002, 0, 1.2])
    problem = make_problem(cfg, y_des=np.tile([26.0, 0.0, 1.875], (3, 1)),
                           v_bounds=(20.0, 30.0), y_bounds=(0.9, 2.85))
    structure = build_qp(problem, cfg, x0, np.array([100.0, 0.01]), PARAMS)
    qp = structure.qp
    rng = np.random.default_rng(31)
    z = rng.normal(size=qp.n)
    grad = qp.gradient(z)
    eps = 1e-6
    for i in range(qp.n):
        dz = np.zeros(qp.n)
        dz[i] = eps
        fd = (qp.objective(z + dz) - qp.objective(z - dz)) / (2 * eps)
        assert abs(fd - grad[i]) <= 1e-6 * max(1.0, abs(grad[i]))


def test_infeasible_input_bounds_rejected():
    cfg = MpcConfig(n_pred=1, n_ctrl=1)
    problem = make_problem(cfg)

    class BadConfig(MpcConfig):
        def input_bounds(self, params):
            return np.array([1.0, 1.0]), np.array([-1.0, -1.0])

    bad = BadConfig(n_pred=1, n_ctrl=1)
    with pytest.raises(ValueError):
        build_qp(problem, bad, np.zeros(6), np.zeros(2), PARAMS)


def test_solver_iteration_limit_carries_best_iterate():
    cfg = MpcConfig(n_pred=2, n_ctrl=1)
    problem = make_problem(cfg, y_des=np.tile([30.0, 0, 1.875], (2, 1)))
    structure = build_qp(problem, cfg, np.array([20.0, 0, 0, 0, 0, 1.875]),
                         np.zeros(2), PARAMS)
    with pytest.raises(QpError) as err:
        solve_qp(structure.qp, max_iter=1)
    assert err.value.best_z is not None


def random_instance(rng):
    n_pred = int(rng.integers(1, 4))
    n_ctrl = int(rng.integers(1, min(n_pred, 2) + 1))
    cfg = MpcConfig(n_pred=n_pred, n_ctrl=n_ctrl, dt=0.05,
                    w_v=float(rng.uniform(0.1, 10)),
                    w_phi=float(rng.uniform(0.1, 10)),
                    w_y=float(rng.uniform(0.1, 10)),
                    w_force=float(rng.uniform(1e-6, 1e-4)),
                    w_steer=float(rng.uniform(0.1, 10)),
                    slack_penalty=float(rng.uniform(1e3, 1e5)))
    vbar = float(rng.uniform(5, 35))
    x0 = np.array([vbar + rng.uniform(-2, 2), rng.uniform(-0.5, 0.5),
                   rng.uniform(-0.05, 0.05), rng.uniform(-0.02, 0.02),
                   0.0, rng.uniform(0.5, 6.0)])
    y_des = np.tile([vbar + rng.uniform(-4, 4), 0.0, rng.uniform(0.5, 6.0)],
                    (n_pred, 1))
    v_bounds = None
    y_bounds = None
    if rng.random() < 0.5:
        v_bounds = (x0[0] - rng.uniform(1, 5), x0[0] + rng.uniform(0.01, 3))
    elif rng.random() < 0.5:
        y_bounds = (x0[5] - rng.uniform(0.5, 2), x0[5] + rng.uniform(0.05, 2))
    problem = make_problem(cfg, vbar=vbar, y_des=y_des,
                           v_bounds=v_bounds, y_bounds=y_bounds)
    u_prev = np.array([rng.uniform(-1000, 1000), rng.uniform(-0.05, 0.05)])
    return build_qp(problem, cfg, x0, u_prev, PARAMS)


def test_solver_matches_enumeration_oracle():
    rng = np.random.default_rng(1234)
    for _ in range(25):
        structure = random_instance(rng)
        sol = solve_qp(structure.qp)
        want = qp_oracle_enumerate(structure.qp)
        assert want is not None
        assert np.max(np.abs(sol.z - want)) < 1e-4


# ---------------------------------------------------------------------------
# controller behaviour


def closed_loop(controller, plan, ref_speed, ref_lat, x0, steps):
    """Plant equals the prediction model: run the loop, return the trajectory."""
    cfg = controller.cfg
    x = np.array(x0, dtype=float)
    u = np.zeros(2)
    traj = [x.copy()]
    diags = []
    for _ in range(steps):
        u, diag = controller.step(plan, np.full(cfg.n_pred, ref_speed),
                                  np.full(cfg.n_pred, ref_lat), x, u)
        a, b, _, _ = linearize(controller.params, float(x[0]), cfg.dt, cfg.v_eps)
        x = a @ x + b @ u
        traj.append(x.copy())
        diags.append((u.copy(), diag))
    return np.array(traj), diags


def test_closed_loop_converges_to_reference():
    cfg = MpcConfig()
    controller = MpcController(cfg, PARAMS)
    x0 = [22.0, 0, 0, 0, 0, 1.875]
    steps = int(10.0 / cfg.dt)
    traj, diags = closed_loop(controller, None, 27.0, 5.625, x0, steps)
    assert abs(traj[-1, 0] - 27.0) < 0.05
    assert abs(traj[-1, 5] - 5.625) < 0.05
    # hard input and rate bounds hold exactly at every step
    u_lo, u_hi = cfg.input_bounds(PARAMS)
    du_lo, du_hi = cfg.rate_bounds(PARAMS)
    prev = np.zeros(2)
    for u, diag in diags:
        assert np.all(u <= u_hi + 1e-9) and np.all(u >= u_lo - 1e-9)
        assert np.all(u - prev <= du_hi + 1e-9) and np.all(u - prev >= du_lo - 1e-9)
        assert not diag.fallback
        prev = u


def test_plan_overrides_and_partial_fallback():
    cfg = MpcConfig(n_pred=8, n_ctrl=3)
    controller = MpcController(cfg, PARAMS)
    x0 = np.array([25.0, 0, 0, 0, 0, 1.875])
    plan = ResolvedPlan(speed_ref=20.0)
    u, _ = controller.step(plan, np.full(cfg.n_pred, 25.0),
                           np.full(cfg.n_pred, 1.875), x0, np.zeros(2))
    assert u[0] < 0  # decelerating toward the plan speed, not the initial ref
    u2, _ = controller.step(None, np.full(cfg.n_pred, 25.0),
                            np.full(cfg.n_pred, 1.875), x0, np.zeros(2))
    assert abs(u2[0]) < abs(u[0])


def test_lateral_constraint_pulls_into_interval():
    cfg = MpcConfig()
    controller = MpcController(cfg, PARAMS)
    # current y outside the constraint interval: controller steers toward it
    x0 = [25.0, 0, 0, 0, 0, 4.2]
    plan = ResolvedPlan(lat_ref=1.875, lat_cons=Interval(0.9, 2.85))
    traj, diags = closed_loop(controller, plan, 25.0, 4.2, x0, int(8.0 / cfg.dt))
    assert abs(traj[-1, 5] - 1.875) < 0.1
    slacks = [d.max_slack for _, d in diags]
    # slack decays monotonically (within tolerance) after the initial transient
    tail = slacks[len(slacks) // 3:]
    assert all(b <= a + 1e-9 for a, b in zip(tail, tail[1:]))
    assert tail[-1] < 1e-6
