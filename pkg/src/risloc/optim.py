"""Small wrappers around scipy optimizers used by the estimator and bounds.

Both wrappers *maximize* and never return a point worse than the start.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize


class NonFiniteObjective(ArithmeticError):
    pass


def central_gradient(f, x, rel_step=1e-6):
    """Central finite-difference gradient with per-coordinate step ``rel_step * max(|x_i|, 1)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = rel_step * max(abs(x[i]), 1.0)
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def quasi_newton_ascent(f, x0, f0=None, bounds=None, rel_step=1e-6, maxiter=100,
                        gtol=1e-12, ftol=1e-15, min_rel_improvement=0.0):
    """Maximize ``f`` from ``x0`` with L-BFGS-B and finite-difference gradients.

    ``f`` may raise ``ArithmeticError`` at infeasible points; those count as
    ``-inf``. Returns ``(x, fx, accepted)``; when no point improves on ``f0``
    by more than ``min_rel_improvement`` the start is returned unchanged.
    """
    x0 = np.asarray(x0, dtype=float)
    if f0 is None:
        f0 = f(x0)
    if not np.isfinite(f0):
        raise NonFiniteObjective(f"objective not finite at start: {f0}")
    scale = abs(f0) if f0 != 0 else 1.0
    best = {"x": x0.copy(), "f": f0}

    def neg(x):
        try:
            v = f(x)
        except NonFiniteObjective:
            raise
        except ArithmeticError:
            return np.inf
        if np.isnan(v):
            raise NonFiniteObjective(f"objective is NaN at {x}")
        if v > best["f"]:
            best["x"], best["f"] = np.array(x, dtype=float), v
        return -v / scale

    def jac(x):
        return central_gradient(neg, x, rel_step)

    minimize(neg, x0, jac=jac, method="L-BFGS-B", bounds=bounds,
             options={"maxiter": maxiter, "gtol": gtol, "ftol": ftol})
    if best["f"] > f0 + min_rel_improvement * abs(f0):
        return best["x"], best["f"], True
    return x0, f0, False


def nelder_mead_max(f, x0, step, xatol=1e-9, fatol=1e-14, maxiter=20000,
                    min_rel_improvement=1e-14):
    """Derivative-free polish of ``f`` around ``x0``; returns ``(x, fx, converged)``.

    ``fatol`` is relative to ``|f(x0)|``. Gains below ``min_rel_improvement``
    are treated as rounding noise and the start is kept.
    """
    x0 = np.asarray(x0, dtype=float)
    f0 = f(x0)
    scale = abs(f0) if f0 != 0 else 1.0
    simplex = np.vstack([x0, x0 + step * np.eye(x0.size)])
    res = minimize(lambda x: -f(x) / scale, x0, method="Nelder-Mead",
                   options={"initial_simplex": simplex, "xatol": xatol, "fatol": fatol,
                            "maxiter": maxiter, "maxfev": 4 * maxiter})
    fx = f(res.x)
    if not np.isfinite(fx) or fx <= f0 + min_rel_improvement * abs(f0):
        return x0, f0, bool(res.success)
    return np.asarray(res.x), fx, bool(res.success)
