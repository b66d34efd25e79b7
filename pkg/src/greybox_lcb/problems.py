"""Outer losses, input domains and the benchmark problems.

Two problems ship with the package:

* ``example1`` -- a scalar input, two outputs, four parameters and the loss
  ``z1^2 + 0.1 z2^2`` on ``[-1, 1]``.
* ``oscillator_ilc`` -- open-loop control of the oscillator
  ``y'' + y' + y = u`` over 15 piecewise-constant controls, with a nominal
  model that underestimates the input gain by a factor of two.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.stats import qmc

from .boxqp import minimize_box_quadratic
from .model import CallableLipModel, LipModel


# ---------------------------------------------------------------------------
# Domain
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoxDomain:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("lower must not exceed upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, u, tol: float = 1e-12) -> bool:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))

    def project(self, u) -> np.ndarray:
        return np.clip(np.atleast_1d(np.asarray(u, dtype=float)), self.lower, self.upper)

    def grid(self, n: int) -> np.ndarray:
        if self.dim != 1:
            raise ValueError("grid() is only defined for one-dimensional domains")
        return np.linspace(self.lower[0], self.upper[0], n)[:, None]

    def latin_hypercube(self, n: int, seed=None) -> np.ndarray:
        pts = qmc.LatinHypercube(d=self.dim, seed=seed).random(n)
        return qmc.scale(pts, self.lower, self.upper)

    def vertices(self) -> np.ndarray:
        return np.array(list(itertools.product(*zip(self.lower, self.upper))), dtype=float)

    def sample_points(self, n: int = 1024, seed: int = 0) -> np.ndarray:
        """Dense grid in 1-D; Latin hypercube plus (for small dimension) the vertices otherwise."""
        if self.dim == 1:
            return self.grid(n)
        pts = self.latin_hypercube(n, seed)
        if self.dim <= 10:
            pts = np.vstack([pts, self.vertices()])
        return pts


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


class LossFunction:
    """Known outer loss ``l(u, z)``."""

    convex_in_z: bool = False
    lower_bound: Optional[float] = None

    def value(self, u, z) -> float:
        raise NotImplementedError

    def grad_z(self, u, z) -> np.ndarray:
        raise NotImplementedError

    def grad_u(self, u, z) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, u, z) -> float:
        return self.value(u, z)


class QuadraticLoss(LossFunction):
    """``(z - r)' W (z - r) + u' R u`` with ``W``, ``R`` positive semidefinite."""

    convex_in_z = True
    lower_bound = 0.0

    def __init__(self, output_weight, reference=0.0, input_weight=0.0, input_dim: Optional[int] = None):
        W = np.asarray(output_weight, dtype=float)
        self.W = np.diag(W) if W.ndim == 1 else np.atleast_2d(W)
        m = self.W.shape[0]
        self.reference = np.broadcast_to(np.asarray(reference, dtype=float), (m,)).copy()
        R = np.asarray(input_weight, dtype=float)
        if R.ndim == 0:
            n = 1 if input_dim is None else input_dim
            R = float(R) * np.eye(n)
        elif R.ndim == 1:
            R = np.diag(R)
        self.R = R
        evals, evecs = np.linalg.eigh(0.5 * (self.W + self.W.T))
        if evals.min() < -1e-12 * max(1.0, evals.max()):
            raise ValueError("output weight must be positive semidefinite")
        self.W_sqrt = (evecs * np.sqrt(np.clip(evals, 0, None))) @ evecs.T

    @property
    def output_dim(self) -> int:
        return self.W.shape[0]

    def _R(self, u):
        if self.R.shape[0] != u.size:
            return self.R[0, 0] * np.eye(u.size)
        return self.R

    def value(self, u, z):
        u = np.atleast_1d(np.asarray(u, float))
        e = np.asarray(z, float) - self.reference
        return float(e @ self.W @ e + u @ self._R(u) @ u)

    def grad_z(self, u, z):
        return 2.0 * self.W @ (np.asarray(z, float) - self.reference)

    def grad_u(self, u, z):
        u = np.atleast_1d(np.asarray(u, float))
        return 2.0 * self._R(u) @ u

    def composite(self, G, h):
        """``(H, g, c)`` with ``l(u, G u + h) = 0.5 u'Hu + g'u + c``."""
        G = np.atleast_2d(G)
        e0 = np.asarray(h, float) - self.reference
        R = self.R if self.R.shape[0] == G.shape[1] else self.R[0, 0] * np.eye(G.shape[1])
        H = 2.0 * (G.T @ self.W @ G + R)
        g = 2.0 * G.T @ self.W @ e0
        return H, g, float(e0 @ self.W @ e0)


class LinearLoss(LossFunction):
    """``l_u(u) + c' z``; the linear-bandit loss for scalar outputs with ``c = 1``."""

    convex_in_z = True

    def __init__(self, weights=1.0, input_cost: Optional[Callable] = None, input_grad: Optional[Callable] = None):
        self.c = np.atleast_1d(np.asarray(weights, dtype=float))
        self.input_cost = input_cost
        self.input_grad = input_grad

    @property
    def output_dim(self) -> int:
        return self.c.size

    def value(self, u, z):
        base = 0.0 if self.input_cost is None else float(self.input_cost(np.atleast_1d(u)))
        return base + float(self.c @ np.atleast_1d(z))

    def grad_z(self, u, z):
        return self.c.copy()

    def grad_u(self, u, z):
        u = np.atleast_1d(np.asarray(u, float))
        if self.input_cost is None:
            return np.zeros(u.size)
        if self.input_grad is not None:
            return np.atleast_1d(np.asarray(self.input_grad(u), float))
        step = 1e-6
        out = np.empty(u.size)
        for j in range(u.size):
            e = np.zeros(u.size)
            e[j] = step
            out[j] = (self.input_cost(u + e) - self.input_cost(u - e)) / (2 * step)
        return out


# ---------------------------------------------------------------------------
# Models used by the benchmarks
# ---------------------------------------------------------------------------


class Example1Model(LipModel):
    """``f(u, theta) = (theta1 u + theta2, theta3 u + theta4)``."""

    input_dim, output_dim, param_dim = 1, 2, 4

    def features(self, u):
        x = float(np.atleast_1d(u)[0])
        return np.array([[x, 1.0, 0.0, 0.0], [0.0, 0.0, x, 1.0]])

    def output_jacobian(self, u, theta, step=None):
        return np.array([[theta[0]], [theta[2]]])

    def affine_in_u(self, theta):
        return np.array([[theta[0]], [theta[2]]]), np.array([theta[1], theta[3]])

    def frobenius_bound(self, domain, n_grid=1024):
        umax = float(np.max(np.abs([domain.lower[0], domain.upper[0]])))
        return float(np.sqrt(2.0 * (umax**2 + 1.0)))


class AffineCorrectionModel(LipModel):
    """``f(u, theta) = B u + b + D(theta1) u + d(theta2)``.

    ``D`` is lower triangular (diagonal included) when ``lower_triangular`` is
    set, otherwise a full matrix; its free entries come first in ``theta`` in
    row-major order, followed by the offset correction ``d``.
    """

    def __init__(self, B, b=None, lower_triangular: bool = True):
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.output_dim, self.input_dim = self.B.shape
        self.b = np.zeros(self.output_dim) if b is None else np.asarray(b, dtype=float).reshape(-1)
        self.lower_triangular = lower_triangular
        m, n = self.output_dim, self.input_dim
        if lower_triangular:
            rows, cols = np.tril_indices(m, 0, n)
        else:
            rows, cols = np.indices((m, n)).reshape(2, -1)
        self._rows, self._cols = rows, cols
        self.n_matrix = rows.size
        self.param_dim = self.n_matrix + m

    def correction(self, theta):
        theta = np.asarray(theta, dtype=float)
        D = np.zeros((self.output_dim, self.input_dim))
        D[self._rows, self._cols] = theta[: self.n_matrix]
        return D, theta[self.n_matrix:]

    def parameters_for(self, D, d) -> np.ndarray:
        """Inverse of :meth:`correction` (entries of ``D`` outside the pattern are ignored)."""
        return np.concatenate([np.asarray(D, float)[self._rows, self._cols], np.asarray(d, float)])

    def features(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        A = np.zeros((self.output_dim, self.param_dim))
        A[self._rows, np.arange(self.n_matrix)] = u[self._cols]
        A[np.arange(self.output_dim), self.n_matrix + np.arange(self.output_dim)] = 1.0
        return A

    def offset(self, u):
        return self.B @ np.atleast_1d(np.asarray(u, dtype=float)) + self.b

    def output_jacobian(self, u, theta, step=None):
        return self.B + self.correction(theta)[0]

    def affine_in_u(self, theta):
        D, d = self.correction(theta)
        return self.B + D, self.b + d

    def frobenius_bound(self, domain, n_grid=1024):
        umax2 = np.maximum(domain.lower**2, domain.upper**2)
        return float(np.sqrt(np.sum(umax2[self._cols]) + self.output_dim))


class QuadraticSurrogate(LipModel):
    """Structure-agnostic cost model ``nominal(u) + b(u)' theta`` (scalar output).

    ``b(u)`` lists the upper-triangle monomials of ``x x'`` with ``x = (u, 1)``.
    With ``half=True`` the diagonal monomials carry a factor 1/2, so that
    ``b(u)' theta = 0.5 x' H x`` where ``H`` is symmetric with diagonal
    ``theta_ii`` and off-diagonal ``H_ij = H_ji = theta_ij``. With
    ``half=False`` the features are plain monomials, e.g. ``(u^2, u, 1)`` for a
    scalar input.
    """

    output_dim = 1

    def __init__(self, input_dim: int, nominal: Optional[tuple] = None, half: bool = True):
        self.input_dim = input_dim
        self.half = half
        k = input_dim + 1
        self._iu = np.triu_indices(k)
        diag = self._iu[0] == self._iu[1]
        self._feat_scale = np.where(diag, 0.5 if half else 1.0, 1.0)
        self.param_dim = self._iu[0].size
        if nominal is None:
            nominal = (np.zeros((input_dim, input_dim)), np.zeros(input_dim), 0.0)
        self.nominal_H, self.nominal_g, self.nominal_c = (np.asarray(nominal[0], float),
                                                          np.asarray(nominal[1], float), float(nominal[2]))

    def _x(self, u):
        return np.append(np.atleast_1d(np.asarray(u, dtype=float)), 1.0)

    def features(self, u):
        x = self._x(u)
        return (np.outer(x, x)[self._iu] * self._feat_scale)[None, :]

    def nominal_cost(self, u) -> float:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return float(0.5 * u @ self.nominal_H @ u + self.nominal_g @ u + self.nominal_c)

    def offset(self, u):
        return np.array([self.nominal_cost(u)])

    def form_matrix(self, theta) -> np.ndarray:
        """Symmetric ``P`` with ``b(u)' theta = x' P x``."""
        k = self.input_dim + 1
        P = np.zeros((k, k))
        P[self._iu] = np.asarray(theta, float) * self._feat_scale * np.where(self._iu[0] == self._iu[1], 1.0, 0.5)
        return P + np.triu(P, 1).T

    def quadratic_in_u(self, theta):
        """``(H, g, c)`` with ``nominal(u) + b(u)' theta = 0.5 u'Hu + g'u + c``."""
        P = self.form_matrix(theta)
        n = self.input_dim
        return (self.nominal_H + 2.0 * P[:n, :n], self.nominal_g + 2.0 * P[:n, n],
                self.nominal_c + P[n, n])

    def parameters_for(self, H, g, c) -> np.ndarray:
        """Parameters whose correction equals ``0.5 u'Hu + g'u + c`` (exact inverse)."""
        n = self.input_dim
        P = np.zeros((n + 1, n + 1))
        P[:n, :n] = 0.5 * np.asarray(H, float)
        P[:n, n] = P[n, :n] = 0.5 * np.asarray(g, float)
        P[n, n] = c
        return P[self._iu] / (self._feat_scale * np.where(self._iu[0] == self._iu[1], 1.0, 0.5))

    def output_jacobian(self, u, theta, step=None):
        H, g, _ = self.quadratic_in_u(theta)
        return (H @ np.atleast_1d(np.asarray(u, float)) + g)[None, :]


# ---------------------------------------------------------------------------
# Ground truth and problems
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GroundTruth:
    theta_star: np.ndarray
    f_star: Callable[[np.ndarray], np.ndarray]
    phi_star: Callable[[np.ndarray], float]
    u_star: np.ndarray
    phi_star_min: float


@dataclass(frozen=True, eq=False)
class Problem:
    """A benchmark: LIP model, known loss, input box and the ground truth oracle."""

    name: str
    model: LipModel
    loss: LossFunction
    domain: BoxDomain
    truth: GroundTruth
    surrogate: Optional[QuadraticSurrogate] = None
    lipschitz_z: float = float("nan")
    regret_scale: float = float("nan")
    a_bar: float = float("nan")
    notes: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.model, self.loss, self.domain, self.truth))

    @property
    def nominal(self):
        """Affine nominal map ``(G, h)``: the model at zero parameters."""
        return self.model.affine_in_u(np.zeros(self.model.param_dim))


def _truth_from_theta(model: LipModel, loss: LossFunction, theta_star, u_star) -> GroundTruth:
    theta_star = np.asarray(theta_star, float)

    def f_star(u):
        return model.predict(np.atleast_1d(u), theta_star)

    def phi_star(u):
        return loss.value(u, f_star(u))

    u_star = np.atleast_1d(np.asarray(u_star, float))
    return GroundTruth(theta_star, f_star, phi_star, u_star, phi_star(u_star))


def _quadratic_truth(model, loss: QuadraticLoss, domain: BoxDomain, theta_star) -> GroundTruth:
    G, h = model.affine_in_u(theta_star)
    H, g, c = loss.composite(G, h)
    u_star, _ = minimize_box_quadratic(H, g, domain.lower, domain.upper, c)
    return _truth_from_theta(model, loss, theta_star, u_star)


def lipschitz_and_regret_scale(loss: LossFunction, truth: GroundTruth, points) -> tuple[float, float]:
    """``L_z = max ||dl/dz(u, f*(u))||`` and ``r_bar = max(1, max phi* - phi*(u*))`` on ``points``."""
    lz, worst = 0.0, truth.phi_star_min
    for u in points:
        z = truth.f_star(u)
        lz = max(lz, float(np.linalg.norm(loss.grad_z(u, z))))
        worst = max(worst, loss.value(u, z))
    return lz, max(1.0, worst - truth.phi_star_min)


def example1_problem() -> Problem:
    model = Example1Model()
    loss = QuadraticLoss([1.0, 0.1], 0.0, 0.0, input_dim=1)
    domain = BoxDomain([-1.0], [1.0])
    theta_star = np.array([-1.1, 0.4, -0.45, 0.55])
    truth = _quadratic_truth(model, loss, domain, theta_star)
    lz, rbar = lipschitz_and_regret_scale(loss, truth, domain.grid(4097))
    surrogate = QuadraticSurrogate(1, half=False)
    return Problem("example1", model, loss, domain, truth, surrogate, lz, rbar, model.frobenius_bound(domain))


# -- oscillator ------------------------------------------------------------


def oscillator_dynamics(gain: float) -> Callable[[np.ndarray, float], np.ndarray]:
    """``y'' + y' + y = gain * u`` as a first-order system in ``(y, y')``."""

    def rhs(x, u):
        return np.array([x[1], -x[0] - x[1] + gain * u])

    return rhs


def discretize_rk4(dynamics, T: float, M: int, u, x0=None, substeps: int = 1) -> np.ndarray:
    """Simulate piecewise-constant controls with classic RK4; return ``y`` at the M interval ends."""
    if M < 1 or T <= 0:
        raise ValueError("need M >= 1 and T > 0")
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size != M:
        raise ValueError(f"expected {M} controls, got {u.size}")
    if not np.all(np.isfinite(u)):
        raise ValueError("controls must be finite")
    x = np.zeros(2) if x0 is None else np.asarray(x0, dtype=float).copy()
    h = T / M / substeps
    out = np.empty(M)
    for k in range(M):
        for _ in range(substeps):
            k1 = dynamics(x, u[k])
            k2 = dynamics(x + 0.5 * h * k1, u[k])
            k3 = dynamics(x + 0.5 * h * k2, u[k])
            k4 = dynamics(x + h * k3, u[k])
            x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k] = x[0]
    return out


def affine_io_map(simulate: Callable[[np.ndarray], np.ndarray], n: int) -> tuple[np.ndarray, np.ndarray]:
    """Recover ``(B, b)`` of an affine input-output map by unit-input superposition."""
    b = simulate(np.zeros(n))
    B = np.column_stack([simulate(np.eye(n)[j]) - b for j in range(n)])
    return B, b


ILC_HORIZON = 4.0
ILC_STEPS = 15
ILC_REFERENCE = 0.5
ILC_INPUT_WEIGHT = 10.0
ILC_TERMINAL_WEIGHT = 100.0
ILC_INPUT_BOUND = 10.0


def ilc_loss(M: int = ILC_STEPS) -> QuadraticLoss:
    W = np.ones(M)
    W[-1] += ILC_TERMINAL_WEIGHT
    return QuadraticLoss(W, ILC_REFERENCE, ILC_INPUT_WEIGHT, input_dim=M)


def oscillator_ilc_problem(M: int = ILC_STEPS, T: float = ILC_HORIZON) -> Problem:
    plant = oscillator_dynamics(1.0)
    nominal = oscillator_dynamics(0.5)
    B_true, b_true = affine_io_map(lambda u: discretize_rk4(plant, T, M, u), M)
    B_nom, b_nom = affine_io_map(lambda u: discretize_rk4(nominal, T, M, u), M)
    # strictly-upper entries are exact zeros by causality; drop roundoff
    B_true, B_nom = np.tril(B_true), np.tril(B_nom)
    return affine_problem("oscillator_ilc", B_true, b_true, B_nom, b_nom, ilc_loss(M),
                          BoxDomain(np.full(M, -ILC_INPUT_BOUND), np.full(M, ILC_INPUT_BOUND)))


def affine_problem(name, B_true, b_true, B_nom, b_nom, loss: QuadraticLoss, domain: BoxDomain,
                   lower_triangular: bool = True) -> Problem:
    """Affine plant, affine nominal model with a LIP correction, and a quadratic loss."""
    B_true, B_nom = np.atleast_2d(B_true), np.atleast_2d(B_nom)
    model = AffineCorrectionModel(B_nom, b_nom, lower_triangular=lower_triangular)
    if lower_triangular and np.any(np.triu(B_true - B_nom, 1)):
        raise ValueError("plant-model mismatch is not lower triangular")
    theta_star = model.parameters_for(B_true - B_nom, np.asarray(b_true, float) - model.b)
    truth = _quadratic_truth(model, loss, domain, theta_star)

    # phi* and ||dl/dz(u, f*(u))|| are convex in u, so their maxima sit at box vertices.
    if domain.dim <= 16:
        V = domain.vertices()
        Z = V @ B_true.T + np.asarray(b_true, float)
        E = Z - loss.reference
        grads = 2.0 * E @ loss.W.T
        lz = float(np.max(np.linalg.norm(grads, axis=1)))
        R = loss.R if loss.R.shape[0] == domain.dim else loss.R[0, 0] * np.eye(domain.dim)
        phis = np.einsum("ij,jk,ik->i", E, loss.W, E) + np.einsum("ij,jk,ik->i", V, R, V)
        rbar = max(1.0, float(phis.max()) - truth.phi_star_min)
    else:
        lz, rbar = lipschitz_and_regret_scale(loss, truth, domain.sample_points(2048))

    H0, g0, c0 = loss.composite(B_nom, model.b)
    surrogate = QuadraticSurrogate(domain.dim, (H0, g0, c0), half=True)
    return Problem(name, model, loss, domain, truth, surrogate, lz, rbar,
                   model.frobenius_bound(domain), {"B_true": B_true, "b_true": np.asarray(b_true, float)})


PROBLEMS = {
    "example1": example1_problem,
    "oscillator_ilc": oscillator_ilc_problem,
}


def get_problem(name: str) -> Problem:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None


def scalar_argmin(phi, lower: float, upper: float, n_grid: int = 100_001) -> float:
    """Global minimizer of a 1-D function by dense grid scan plus bounded refinement."""
    grid = np.linspace(lower, upper, n_grid)
    vals = np.array([phi(x) for x in grid])
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, n_grid - 1)]
    res = minimize_scalar(phi, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    return float(res.x) if res.fun <= vals[i] else float(grid[i])


def linear_bandit_problem(seed=0, d: int = 3, input_cost_scale: float = 0.5) -> Problem:
    """Random scalar linear-bandit instance on ``[-1, 1]``.

    Features are ``cos(omega_j u + phase_j)``, the loss is ``kappa u^2 + z``
    (so ``L_z = 1``) and the true parameters are standard normal.
    """
    rng = np.random.default_rng(seed)
    omega = rng.uniform(0.5, 4.0, d)
    phase = rng.uniform(0.0, 2 * np.pi, d)
    kappa = rng.uniform(0.0, input_cost_scale)
    theta_star = rng.standard_normal(d)

    def features(u):
        return np.cos(omega * u[0] + phase)[None, :]

    model = CallableLipModel(features, 1, 1, d)
    model.output_jacobian = lambda u, theta, step=None: (-(omega * np.sin(omega * u[0] + phase)) @ theta).reshape(1, 1)
    loss = LinearLoss(1.0, lambda u: kappa * u[0] ** 2, lambda u: np.array([2 * kappa * u[0]]))
    domain = BoxDomain([-1.0], [1.0])

    def phi(x):
        return kappa * x**2 + float(np.cos(omega * x + phase) @ theta_star)

    u_star = scalar_argmin(phi, -1.0, 1.0, 20_001)
    truth = _truth_from_theta(model, loss, theta_star, [u_star])
    grid = domain.grid(4097)
    lz, rbar = lipschitz_and_regret_scale(loss, truth, grid)
    a_bar = float(max(np.linalg.norm(features(u)) for u in grid))
    return Problem(f"linear_bandit_{seed}", model, loss, domain, truth, None, lz, rbar, a_bar)
