"""Dense convex QP with inequality constraints, solved by a primal active set.

minimize    0.5 * z' H z + g' z
subject to  A z <= b

The MPC problems this serves are small (tens of variables, a few hundred
rows) and always come with a strictly feasible starting point, so a plain
null-step/blocking-constraint active-set iteration (KKT system per step) is
fast, deterministic, and exact on non-degenerate problems.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FEAS_TOL = 1e-9
STEP_TOL = 1e-11
LAMBDA_TOL = 1e-9


class QpError(RuntimeError):
    """Solver failed to converge; carries the best iterate found."""

    def __init__(self, message: str, best_z: np.ndarray | None = None):
        super().__init__(message)
        self.best_z = best_z


@dataclass
class Qp:
    """Problem data plus optional row labels for diagnostics."""

    h: np.ndarray
    g: np.ndarray
    a_ineq: np.ndarray          # (m, n); m may be 0
    b_ineq: np.ndarray          # (m,)
    row_labels: list[str] = field(default_factory=list)
    z0: np.ndarray | None = None   # feasible start (defaults to 0)

    def __post_init__(self) -> None:
        self.h = np.asarray(self.h, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        n = self.g.shape[0]
        if self.h.shape != (n, n):
            raise ValueError("H must be square and match g")
        if not np.allclose(self.h, self.h.T, atol=1e-10):
            raise ValueError("H must be symmetric")
        self.a_ineq = np.asarray(self.a_ineq, dtype=float).reshape(-1, n)
        self.b_ineq = np.asarray(self.b_ineq, dtype=float).reshape(-1)
        if self.a_ineq.shape[0] != self.b_ineq.shape[0]:
            raise ValueError("A and b row counts differ")

    @property
    def n(self) -> int:
        return self.g.shape[0]

    @property
    def m(self) -> int:
        return self.b_ineq.shape[0]

    def objective(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.h @ z + self.g @ z)

    def gradient(self, z: np.ndarray) -> np.ndarray:
        return self.h @ np.asarray(z, dtype=float) + self.g

    def residuals(self, z: np.ndarray) -> np.ndarray:
        """A z - b; positive entries are violations."""
        if self.m == 0:
            return np.zeros(0)
        return self.a_ineq @ z - self.b_ineq


@dataclass
class QpSolution:
    z: np.ndarray
    objective: float
    active_set: list[int]
    iterations: int


def _kkt_step(h: np.ndarray, grad: np.ndarray, a_w: np.ndarray,
              resid_w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve the equality-constrained step: returns (p, lambda)."""
    n = grad.shape[0]
    k = a_w.shape[0]
    if k == 0:
        try:
            p = np.linalg.solve(h, -grad)
        except np.linalg.LinAlgError:
            p = np.linalg.lstsq(h, -grad, rcond=None)[0]
        return p, np.zeros(0)
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = h
    kkt[:n, n:] = a_w.T
    kkt[n:, :n] = a_w
    rhs = np.concatenate([-grad, resid_w])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def solve_qp(qp: Qp, max_iter: int | None = None) -> QpSolution:
    """Primal active-set solve from a feasible start.

    Raises QpError (with the best iterate attached) if the iteration limit
    is hit; callers fall back to their previous control input in that case.
    """
    n, m = qp.n, qp.m
    z = np.zeros(n) if qp.z0 is None else np.array(qp.z0, dtype=float)
    if m and np.any(qp.residuals(z) > FEAS_TOL):
        raise QpError("starting point infeasible", best_z=z)

    if m == 0:
        try:
            z = np.linalg.solve(qp.h, -qp.g)
        except np.linalg.LinAlgError:
            z = np.linalg.lstsq(qp.h, -qp.g, rcond=None)[0]
        return QpSolution(z=z, objective=qp.objective(z), active_set=[], iterations=0)

    if max_iter is None:
        max_iter = 50 + 10 * (n + m)

    working: list[int] = []
    scale = max(1.0, float(np.linalg.norm(qp.g)))
    for iteration in range(1, max_iter + 1):
        grad = qp.gradient(z)
        a_w = qp.a_ineq[working] if working else np.zeros((0, n))
        resid_w = (qp.b_ineq[working] - a_w @ z) if working else np.zeros(0)
        p, lam = _kkt_step(qp.h, grad, a_w, resid_w)

        if np.linalg.norm(p) <= STEP_TOL * max(1.0, np.linalg.norm(z)):
            if not working or np.all(lam >= -LAMBDA_TOL * scale):
                return QpSolution(z=z, objective=qp.objective(z),
                                  active_set=sorted(working), iterations=iteration)
            working.pop(int(np.argmin(lam)))
            continue

        # step length to the nearest blocking constraint
        alpha = 1.0
        blocking = -1
        slack = qp.b_ineq - qp.a_ineq @ z
        direction = qp.a_ineq @ p
        for i in range(m):
            if i in working or direction[i] <= FEAS_TOL:
                continue
            alpha_i = max(slack[i], 0.0) / direction[i]
            if alpha_i < alpha - 1e-15:
                alpha = alpha_i
                blocking = i
        z = z + alpha * p
        if blocking >= 0:
            working.append(blocking)

    raise QpError(f"active-set QP did not converge in {max_iter} iterations", best_z=z)
