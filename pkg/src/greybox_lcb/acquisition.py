"""Structure-exploiting lower-confidence-bound acquisition.

``Q(u; gamma, I) = min { l(u, z) : z in Z(u; gamma, I) }`` where the
confidence set is the image of the parameter ellipsoid
``||theta - mu||_Lambda <= gamma``. The inner problem is posed on the unit
ball through ``theta = mu + gamma L^{-T} w`` (``Lambda = L L^T``), which stays
well posed when the output covariance is singular.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .model import GaussianPosterior, LipModel
from .problems import BoxDomain, LinearLoss, LossFunction, QuadraticLoss

INNER_TOL = 1e-9
INNER_MAX_ITER = 500
OUTER_TOL = 1e-7
OUTER_MAX_ITER = 200
TIE_RTOL = 1e-9


@dataclass
class InnerResult:
    z: np.ndarray
    value: float
    theta_tilde: np.ndarray
    w: np.ndarray
    converged: bool = True
    iterations: int = 0


def _project_ball(w):
    nrm = np.linalg.norm(w)
    return w / nrm if nrm > 1.0 else w


def inner_minimize_linear_closed_form(l_u: float, mu: float, sigma: float, gamma: float) -> float:
    """Minimum of ``l_u + z`` over the interval ``|z - mu| <= gamma sqrt(sigma)``."""
    if sigma < 0:
        raise ValueError("output variance must be nonnegative")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    return l_u + mu - gamma * math.sqrt(sigma)


def _inner_linear(loss: LinearLoss, u, center, K):
    g = K.T @ loss.c
    nrm = np.linalg.norm(g)
    w = -g / nrm if nrm > 0 else np.zeros(K.shape[1])
    return w, 0


def _inner_ball_lsq(loss: QuadraticLoss, u, center, K):
    """Exact minimizer of ``||W^{1/2}(center + K w - r)||^2`` over ``||w|| <= 1``."""
    G = loss.W_sqrt @ K
    h = loss.W_sqrt @ (loss.reference - center)
    U, s, Vt = np.linalg.svd(G, full_matrices=False)
    keep = s > 1e-14 * max(s[0] if s.size else 0.0, 1e-300)
    s, beta, Vt = s[keep], (U.T @ h)[keep], Vt[keep]
    if s.size == 0:
        return np.zeros(K.shape[1]), 0
    # work with singular values scaled to s_max = 1 (lambda is scaled by s_max^2)
    t = s / s[0]
    with np.errstate(over="ignore"):
        bt = beta / s[0]
    if not np.all(np.abs(bt) < 1e150):
        # the ball is negligible next to the residual: the lambda -> inf direction is
        # exact to relative order 1e-150
        d = Vt.T @ (t * beta)
        return d / np.linalg.norm(d), 0
    coef = bt / t
    if coef @ coef <= 1.0:
        return Vt.T @ coef, 0
    # 1/||w(lam)|| is concave and increasing, so Newton started left of the root
    # converges monotonically; ||t bt|| - 1 is such a starting point.
    tb = t * bt
    lam, it = max(0.0, float(np.linalg.norm(tb)) - 1.0), 0
    for it in range(1, 101):
        denom = t**2 + lam
        c = tb / denom
        n2 = c @ c
        nrm = math.sqrt(n2)
        phi = 1.0 / nrm - 1.0
        if abs(phi) < 1e-15:
            break
        dn2 = -2.0 * np.sum(tb**2 / denom**3)
        dphi = -0.5 * n2**-1.5 * dn2
        step = -phi / dphi
        lam = lam + step
        if abs(step) <= 1e-16 * max(lam, 1.0):
            break
    w = Vt.T @ (tb / (t**2 + lam))
    return _project_ball(w), it


def _inner_spg(loss: LossFunction, u, center, K, tol=INNER_TOL, max_iter=INNER_MAX_ITER, w0=None):
    """Nonmonotone spectral projected gradient on the unit ball."""

    def h(w):
        return loss.value(u, center + K @ w)

    def grad(w):
        return K.T @ loss.grad_z(u, center + K @ w)

    w = np.zeros(K.shape[1]) if w0 is None else _project_ball(np.asarray(w0, float))
    f, g = h(w), grad(w)
    gn = np.linalg.norm(g)
    alpha = 1.0 / gn if gn > 0 else 1.0
    recent = [f]
    for it in range(1, max_iter + 1):
        if np.linalg.norm(_project_ball(w - g) - w) <= tol:
            return w, it - 1, True
        d = _project_ball(w - alpha * g) - w
        slope = g @ d
        lam, f_ref = 1.0, max(recent[-10:])
        while True:
            w_new = w + lam * d
            f_new = h(w_new)
            if f_new <= f_ref + 1e-4 * lam * slope or lam < 1e-20:
                break
            lam *= 0.5
        g_new = grad(w_new)
        s, y = w_new - w, g_new - g
        sy = s @ y
        alpha = float(np.clip(s @ s / sy, 1e-30, 1e30)) if sy > 0 else 1e30
        w, f, g = w_new, f_new, g_new
        recent.append(f)
    converged = np.linalg.norm(_project_ball(w - g) - w) <= tol
    return w, max_iter, bool(converged)


def inner_minimize(
    loss: LossFunction,
    model: LipModel,
    post: GaussianPosterior,
    u,
    gamma: float,
    method: str = "auto",
    tol: float = INNER_TOL,
    max_iter: int = INNER_MAX_ITER,
) -> InnerResult:
    """Solve the inner problem of the acquisition at a fixed input ``u``.

    ``method`` is ``"auto"`` (closed form for linear losses, exact ball-constrained
    least squares for quadratic losses, SPG otherwise), ``"exact"`` or ``"spg"``.
    Non-convergence of SPG is reported through ``converged`` with the best iterate.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if not np.all(np.isfinite(u)):
        raise ValueError("u must be finite")
    center = model.predict(u, post.mean)
    K = gamma * (model.features(u) @ post.inv_chol_t)
    converged, iters = True, 0
    if method == "spg" or (method == "auto" and not isinstance(loss, (LinearLoss, QuadraticLoss))):
        w, iters, converged = _inner_spg(loss, u, center, K, tol, max_iter)
    elif isinstance(loss, LinearLoss):
        w, iters = _inner_linear(loss, u, center, K)
    elif isinstance(loss, QuadraticLoss):
        w, iters = _inner_ball_lsq(loss, u, center, K)
    else:
        raise ValueError(f"no exact inner solver for {type(loss).__name__}")
    z = center + K @ w
    theta = post.mean + gamma * (post.inv_chol_t @ w)
    return InnerResult(z, loss.value(u, z), theta, w, converged, iters)


@dataclass
class AcquisitionProblem:
    loss: LossFunction
    model: LipModel
    posterior: GaussianPosterior
    gamma: float
    domain: BoxDomain
    inner_method: str = "auto"

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")

    def inner(self, u) -> InnerResult:
        return inner_minimize(self.loss, self.model, self.posterior, u, self.gamma, self.inner_method)

    def value(self, u) -> float:
        return self.inner(u).value

    def values(self, points) -> np.ndarray:
        """``Q`` at each row of ``points``; vectorized for linear losses with the exact inner solver."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if not (isinstance(self.loss, LinearLoss) and self.inner_method in ("auto", "exact")):
            return np.array([self.value(x) for x in points])
        A = np.stack([self.model.features(x) for x in points])
        offs = np.stack([self.model.offset(x) for x in points])
        c = self.loss.c
        Kc = np.einsum("k,nkd,de->ne", c, A, self.posterior.inv_chol_t)
        base = np.array([self.loss.value(x, np.zeros_like(c)) for x in points])
        return base + (offs + A @ self.posterior.mean) @ c - self.gamma * np.linalg.norm(Kc, axis=1)

    def value_and_grad(self, u):
        """``Q(u)`` and its envelope gradient evaluated at the inner solution."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        res = self.inner(u)
        J = self.model.output_jacobian(u, res.theta_tilde)
        grad = self.loss.grad_u(u, res.z) + J.T @ self.loss.grad_z(u, res.z)
        return res.value, grad, res

    def output_trace(self, u) -> float:
        K = self.model.features(np.atleast_1d(u)) @ self.posterior.inv_chol_t
        return float(np.sum(K * K))


def acquisition_value(prob: AcquisitionProblem, u) -> float:
    if not prob.domain.contains(u):
        raise ValueError("u lies outside the input domain")
    return prob.value(u)


@dataclass
class SolveReport:
    u_opt: np.ndarray
    z_opt: np.ndarray
    theta_tilde_opt: np.ndarray
    q_value: float
    n_starts: int
    converged: bool


def _local_solve(prob: AcquisitionProblem, x0, maxiter, tol):
    bounds = list(zip(prob.domain.lower, prob.domain.upper))

    def fun(x):
        v, g, _ = prob.value_and_grad(x)
        return v, g

    res = minimize(fun, prob.domain.project(x0), jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": maxiter, "ftol": 1e-14, "gtol": tol})
    x = prob.domain.project(res.x)
    return x, prob.value(x), bool(res.success)


def select_candidate(prob: AcquisitionProblem, cands: Sequence[tuple[np.ndarray, float]]):
    """Pick the minimum; near-ties go to the largest output-covariance trace, then the smallest u."""
    qmin = min(q for _, q in cands)
    tied = [(u, q) for u, q in cands if q <= qmin + TIE_RTOL * (1.0 + abs(qmin))]
    if len(tied) == 1:
        return tied[0]
    traces = np.array([prob.output_trace(u) for u, _ in tied])
    tmax = traces.max()
    best = [c for c, t in zip(tied, traces) if t >= tmax - TIE_RTOL * (1.0 + abs(tmax))]
    return min(best, key=lambda c: tuple(c[0]))


def minimize_acquisition(
    prob: AcquisitionProblem,
    starts: int = 16,
    rng_seed=0,
    grid_points: int = 512,
    extra_starts: Optional[Sequence[np.ndarray]] = None,
    maxiter: int = OUTER_MAX_ITER,
    tol: float = OUTER_TOL,
) -> SolveReport:
    """Multi-start minimization of ``Q`` over the input box.

    Starts come from a Latin hypercube of the box (plus ``extra_starts``); for
    scalar inputs a ``grid_points`` scan seeds the best grid points and its
    exact values also take part in the final selection.
    """
    if starts < 1:
        raise ValueError("starts must be >= 1")
    dom = prob.domain
    seq = rng_seed if isinstance(rng_seed, np.random.SeedSequence) else np.random.SeedSequence(rng_seed)
    x0s = list(dom.latin_hypercube(starts, seed=np.random.default_rng(seq)))
    if extra_starts is not None:
        x0s.extend(np.atleast_1d(np.asarray(x, float)) for x in extra_starts)
    cands = []
    if dom.dim == 1 and grid_points > 0:
        grid = dom.grid(grid_points)
        vals = prob.values(grid)
        cands.extend(zip(grid, vals))
        order = np.argsort(vals, kind="stable")
        local_min = [i for i in order if (i == 0 or vals[i] <= vals[i - 1]) and
                     (i == len(vals) - 1 or vals[i] <= vals[i + 1])]
        x0s.extend(grid[i] for i in local_min[:8])
    any_conv = False
    for x0 in x0s:
        x, q, ok = _local_solve(prob, x0, maxiter, tol)
        any_conv |= ok
        cands.append((x, q))
    u_opt, _ = select_candidate(prob, cands)
    res = prob.inner(u_opt)
    return SolveReport(u_opt, res.z, res.theta_tilde, res.value, len(x0s), any_conv)
