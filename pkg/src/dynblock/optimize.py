"""Limited-memory quasi-Newton ascent with Armijo backtracking.

Small, deterministic L-BFGS tailored to the M-step contract: every accepted
step improves the objective, the best iterate seen is what comes back (never
a worse point than the start), line-search failure degrades to a warning
instead of an exception, and curvature breakdown clears the memory pairs and
restarts from a gradient step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["maximize", "AscentResult"]


@dataclass
class AscentResult:
    x: np.ndarray
    value: float
    grad_norm: float
    n_iter: int
    converged: bool
    line_search_failed: bool


def _two_loop(grad, s_hist, y_hist, rho_hist):
    q = grad.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= np.dot(s, y) / np.dot(y, y)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return q


def maximize(value_and_grad, x0, *, max_iter=50, memory=10, grad_tol=1e-7,
             armijo_c=1e-4, shrink=0.5, max_backtracks=40):
    """Ascend `value_and_grad` from `x0`; see AscentResult for outputs.

    `value_and_grad(x) -> (f, g)` may signal an infeasible point with
    f = -inf; the line search backtracks across such points.
    """
    x = np.array(x0, dtype=np.float64)
    f, g = value_and_grad(x)
    if not np.isfinite(f):
        raise ValueError("objective not finite at the starting point")
    best_x, best_f = x.copy(), f
    s_hist, y_hist, rho_hist = [], [], []
    failed = False
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm < grad_tol:
            return AscentResult(best_x, best_f, gnorm, it - 1, True, failed)

        direction = _two_loop(g, s_hist, y_hist, rho_hist)
        slope = float(np.dot(g, direction))
        if slope <= 0.0:
            # not an ascent direction: drop the memory, restart on the gradient
            s_hist, y_hist, rho_hist = [], [], []
            direction = g.copy()
            slope = float(np.dot(g, g))
            if slope == 0.0:
                return AscentResult(best_x, best_f, gnorm, it - 1, True, failed)

        step = 1.0 if s_hist else min(1.0, 1.0 / max(np.linalg.norm(direction), 1.0))
        accepted = False
        for _ in range(max_backtracks):
            x_new = x + step * direction
            f_new, g_new = value_and_grad(x_new)
            if np.isfinite(f_new) and f_new >= f + armijo_c * step * slope:
                accepted = True
                break
            step *= shrink
        if not accepted:
            failed = True
            break

        s = x_new - x
        yv = g - g_new  # minimization convention on -f
        sy = float(np.dot(s, yv))
        if sy > 1e-12 * np.linalg.norm(s) * max(np.linalg.norm(yv), 1e-300):
            s_hist.append(s)
            y_hist.append(yv)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        else:
            # curvature breakdown: restart the approximation
            s_hist, y_hist, rho_hist = [], [], []

        x, f, g = x_new, f_new, g_new
        if f > best_f:
            best_x, best_f = x.copy(), f

    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    return AscentResult(best_x, best_f, gnorm, it, False, failed)
