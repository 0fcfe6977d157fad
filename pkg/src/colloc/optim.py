"""Damped least squares with a finite-difference Jacobian.

Levenberg-Marquardt with Nielsen's gain-ratio update of the damping
parameter.  Parameter counts here stay below a dozen, so the Jacobian is
built column by column with forward differences.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    iterations: int
    evaluations: int
    converged: bool
    message: str
    history: list[float] = field(default_factory=list)


def fd_jacobian(fun, x, r, rel_step=1e-7, central=False):
    J = np.empty((r.size, x.size))
    for j in range(x.size):
        h = rel_step * (1.0 + abs(x[j]))
        xp = x.copy()
        xp[j] += h
        rp = np.asarray(fun(xp), dtype=float)
        if central:
            xp[j] = x[j] - h
            col = (rp - np.asarray(fun(xp), dtype=float)) / (2.0 * h)
            if np.all(np.isfinite(col)):
                J[:, j] = col
                continue
            xp[j] = x[j] + h
        col = (rp - r) / h
        if not np.all(np.isfinite(col)):
            # forward point left the admissible region: difference backwards
            xp[j] = x[j] - h
            col = (r - np.asarray(fun(xp), dtype=float)) / h
        J[:, j] = np.where(np.isfinite(col), col, 0.0)
    return J


def levenberg_marquardt(
    fun: Callable[[np.ndarray], np.ndarray],
    x0,
    max_iter: int = 200,
    ftol: float = 1e-15,
    xtol: float = 1e-15,
    gtol: float = 1e-15,
    tau: float = 1e-3,
    rel_step: float = 1e-7,
    central: bool = False,
) -> LMResult:
    """Minimize ½‖fun(x)‖².

    ``history`` records the cost after every accepted step (starting with the
    initial cost), so it is non-increasing by construction.  ``central``
    switches the Jacobian to central differences, which matters on
    ill-conditioned zero-residual fits where forward-difference errors slow
    Gauss-Newton down to linear convergence.
    """
    x = np.array(x0, dtype=float)
    r = np.asarray(fun(x), dtype=float)
    nfev = 1
    cost = 0.5 * float(r @ r)
    history = [cost]
    if not np.isfinite(cost):
        return LMResult(x, cost, 0, nfev, False, "non-finite initial residual", history)
    J = fd_jacobian(fun, x, r, rel_step, central)
    nfev += x.size * (2 if central else 1)
    A = J.T @ J
    g = J.T @ r
    mu = tau * max(float(np.max(np.diag(A))), 1e-300)
    nu = 2.0
    message = "maximum iterations reached"
    converged = False

    it = 0
    for it in range(1, max_iter + 1):
        if cost == 0.0 or np.max(np.abs(g)) <= gtol * max(1.0, cost):
            converged, message = True, "gradient below tolerance"
            break
        try:
            h = np.linalg.solve(A + mu * np.eye(x.size), -g)
        except np.linalg.LinAlgError:
            mu *= nu
            nu *= 2.0
            continue
        if np.linalg.norm(h) <= xtol * (np.linalg.norm(x) + xtol):
            converged, message = True, "step below tolerance"
            break
        x_new = x + h
        r_new = np.asarray(fun(x_new), dtype=float)
        nfev += 1
        cost_new = 0.5 * float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
        predicted = 0.5 * float(h @ (mu * h - g))
        rho = (cost - cost_new) / predicted if predicted > 0 else -1.0
        if rho > 0:
            reduction = cost - cost_new
            x, r, cost = x_new, r_new, cost_new
            history.append(cost)
            J = fd_jacobian(fun, x, r, rel_step, central)
            nfev += x.size * (2 if central else 1)
            A = J.T @ J
            g = J.T @ r
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            if reduction <= ftol * max(cost, 1e-300):
                converged, message = True, "relative reduction below tolerance"
                break
        else:
            mu *= nu
            nu *= 2.0
            if mu > 1e300:
                converged, message = True, "damping saturated"
                break
    return LMResult(x, cost, it, nfev, converged, message, history)
