"""Shared test oracles, independent of the implementation paths they check."""

from itertools import combinations

import numpy as np


def qp_oracle_enumerate(qp, tol=1e-8):
    """Exact minimizer of a convex QP by enumerating candidate active sets.

    For every subset of constraint rows (up to n), solve the equality-KKT
    system and keep KKT points that are primal feasible with non-negative
    multipliers; the best objective among them is the optimum. Exponential,
    so only for small test instances.
    """
    n, m = qp.n, qp.m
    best_z, best_obj = None, np.inf
    for size in range(0, min(n, m) + 1):
        for subset in combinations(range(m), size):
            idx = list(subset)
            a_w = qp.a_ineq[idx]
            kkt = np.zeros((n + size, n + size))
            kkt[:n, :n] = qp.h
            if size:
                kkt[:n, n:] = a_w.T
                kkt[n:, :n] = a_w
            rhs = np.concatenate([-qp.g, qp.b_ineq[idx]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            if not np.all(np.isfinite(sol)):
                continue
            z, lam = sol[:n], sol[n:]
            if size and np.any(lam < -tol):
                continue
            if m and np.any(qp.a_ineq @ z - qp.b_ineq > tol):
                continue
            obj = qp.objective(z)
            if obj < best_obj - 1e-12:
                best_obj, best_z = obj, z
    return best_z


def rk4_rollout(a_cont, b_cont, x0, u, duration, dt):
    """Integrate xdot = A x + B u (constant u) with classic RK4."""
    x = np.array(x0, dtype=float)
    deriv = lambda state: a_cont @ state + b_cont @ u
    steps = int(round(duration / dt))
    for _ in range(steps):
        k1 = deriv(x)
        k2 = deriv(x + 0.5 * dt * k1)
        k3 = deriv(x + 0.5 * dt * k2)
        k4 = deriv(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x
