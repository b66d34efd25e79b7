"""Box-constrained quadratic minimization ``min 0.5 x'Hx + g'x`` over ``lower <= x <= upper``."""
from __future__ import annotations

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.optimize import lsq_linear, minimize
from scipy.stats import qmc


def quad_value(H, g, c, x):
    return float(0.5 * x @ H @ x + g @ x + c)


def minimize_box_quadratic(H, g, lower, upper, c: float = 0.0, seed=0, starts: int = 8):
    """Return ``(x, value)`` for the box-constrained quadratic.

    Convex problems are solved exactly: an unconstrained Newton step when it is
    feasible, otherwise bounded-variable least squares (an active-set method)
    on the Cholesky factor. Indefinite problems fall back to multi-start
    L-BFGS-B, which only guarantees a local minimizer.
    """
    H = 0.5 * (np.asarray(H, float) + np.asarray(H, float).T)
    g = np.asarray(g, float)
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    n = g.size
    try:
        C = cholesky(H, lower=False)
    except np.linalg.LinAlgError:
        C = None
    if C is not None:
        x = -solve_triangular(C, solve_triangular(C, g, trans="T"))
        if np.all(x >= lower) and np.all(x <= upper):
            return x, quad_value(H, g, c, x)
        rhs = -solve_triangular(C, g, trans="T")
        res = lsq_linear(C, rhs, bounds=(lower, upper), method="bvls", tol=1e-14)
        x = np.clip(res.x, lower, upper)
        return x, quad_value(H, g, c, x)

    def fun(x):
        Hx = H @ x
        return 0.5 * x @ Hx + g @ x, Hx + g

    pts = qmc.LatinHypercube(d=n, seed=seed).random(starts)
    pts = qmc.scale(pts, lower, upper) if n > 0 else pts
    best = None
    for x0 in pts:
        res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=list(zip(lower, upper)),
                       options={"maxiter": 500, "ftol": 1e-15, "gtol": 1e-10})
        x = np.clip(res.x, lower, upper)
        val = quad_value(H, g, c, x)
        if best is None or val < best[1]:
            best = (x, val)
    return best
