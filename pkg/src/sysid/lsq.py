"""Box-constrained Levenberg-Marquardt with a finite-difference Jacobian."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LsqResult:
    x: np.ndarray
    cost: float
    residuals: np.ndarray
    n_iter: int
    n_eval: int
    converged: bool
    message: str


def numerical_jacobian(fun, x, r0, lower, upper, rel_step=1e-6):
    """Forward differences, stepping backwards where ``x`` sits on its upper bound."""
    J = np.empty((r0.size, x.size))
    for j in range(x.size):
        h = rel_step * max(abs(x[j]), 1.0)
        if x[j] + h > upper[j]:
            h = -h
        xp = x.copy()
        xp[j] += h
        J[:, j] = (fun(xp) - r0) / h
    return J


def _damped_step(J, g, x, lower, upper, free, mu):
    """Solve the damped normal equations on the free coordinates.

    Coordinates on a bound that the step would push further out are frozen
    and the system re-solved, so the projected step stays a descent step.
    """
    free = free.copy()
    step = np.zeros_like(x)
    for _ in range(x.size):
        A = J[:, free].T @ J[:, free]
        diag = np.maximum(np.diag(A), 1e-12 * max(np.max(np.diag(A), initial=0.0), 1e-300))
        step[:] = 0.0
        step[free] = np.linalg.solve(A + mu * np.diag(diag), -g[free])
        blocked = free & (((x <= lower) & (step < 0)) | ((x >= upper) & (step > 0)))
        if not blocked.any():
            break
        free &= ~blocked
        if not free.any():
            step[:] = 0.0
            break
    return step


def levenberg_marquardt(fun, x0, lower, upper, max_iter=500, ftol=1e-8, xtol=1e-12,
                        gtol=1e-14, tau=1e-3, rel_step=1e-6):
    """Minimise ``0.5 * ||fun(x)||^2`` subject to ``lower <= x <= upper``.

    Steps are Marquardt-scaled (damping proportional to ``diag(J^T J)``) and
    projected onto the box. Coordinates pinned on a bound whose gradient
    points outward are frozen for that step. Damping follows Nielsen's
    gain-ratio rule.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    r = fun(x)
    n_eval = 1
    if not np.all(np.isfinite(r)):
        return LsqResult(x, np.inf, r, 0, n_eval, False, "non-finite residual at start")
    cost = 0.5 * float(r @ r)
    mu, nu = None, 2.0
    J = numerical_jacobian(fun, x, r, lower, upper, rel_step)
    n_eval += x.size

    for it in range(1, max_iter + 1):
        g = J.T @ r
        at_lo = (x <= lower) & (g > 0)
        at_hi = (x >= upper) & (g < 0)
        free = ~(at_lo | at_hi)
        if cost == 0.0 or np.max(np.abs(g[free]), initial=0.0) <= gtol * max(cost, 1e-300):
            return LsqResult(x, cost, r, it - 1, n_eval, True, "gradient tolerance reached")
        if mu is None:
            mu = tau
        try:
            step = _damped_step(J, g, x, lower, upper, free, mu)
        except np.linalg.LinAlgError:
            mu *= nu
            nu *= 2
            continue
        x_new = np.clip(x + step, lower, upper)
        step = x_new - x
        if np.linalg.norm(step) <= xtol * (np.linalg.norm(x) + xtol):
            return LsqResult(x, cost, r, it, n_eval, True, "step tolerance reached")
        r_new = fun(x_new)
        n_eval += 1
        cost_new = 0.5 * float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
        predicted = cost - 0.5 * float(np.sum((r + J @ step) ** 2))
        rho = (cost - cost_new) / predicted if predicted > 0 else -1.0
        if rho > 0:
            rel_drop = (cost - cost_new) / max(cost, 1e-300)
            x, r, cost = x_new, r_new, cost_new
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            if rel_drop < ftol:
                return LsqResult(x, cost, r, it, n_eval, True, "cost tolerance reached")
            J = numerical_jacobian(fun, x, r, lower, upper, rel_step)
            n_eval += x.size
        else:
            mu *= nu
            nu *= 2.0
            if mu > 1e16:
                return LsqResult(x, cost, r, it, n_eval, True, "damping saturated")
    return LsqResult(x, cost, r, max_iter, n_eval, False, "maximum iterations reached")
