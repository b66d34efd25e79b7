"""Iterative methods that propose the next input from the observation history.

* ``lcb_structured`` -- minimizes the structure-exploiting acquisition ``Q``.
* ``lcb_agnostic`` -- the linear-bandit LCB on a quadratic cost surrogate.
* ``ts_structured`` / ``ts_agnostic`` -- Thompson sampling on either model.
* ``zoo_ilc`` -- zero-order ILC with a damped additive output correction.

The agnostic methods are the structured ones applied to the surrogate: a
scalar-output LIP model whose offset is the nominal cost, combined with the
identity loss ``l(u, z) = z``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .acquisition import AcquisitionProblem, minimize_acquisition
from .boxqp import minimize_box_quadratic
from .model import (
    GammaSchedule,
    GaussianPosterior,
    LipModel,
    NoiseModel,
    sample_parameters,
    update_posterior,
)
from .problems import BoxDomain, LinearLoss, LossFunction, Problem, QuadraticLoss

STRATEGY_KINDS = ("lcb_structured", "lcb_agnostic", "ts_structured", "ts_agnostic", "zoo_ilc")


@dataclass
class History:
    """Append-only record of evaluated inputs and observations."""

    inputs: list = field(default_factory=list)
    observations: list = field(default_factory=list)

    def append(self, u, y) -> None:
        self.inputs.append(np.array(u, dtype=float, copy=True))
        self.observations.append(np.atleast_1d(np.array(y, dtype=float, copy=True)))

    def __len__(self) -> int:
        return len(self.inputs)


@dataclass
class Proposal:
    u: np.ndarray
    q_value: float = float("nan")
    gamma: float = float("nan")
    z_sol: Optional[np.ndarray] = None
    converged: bool = True


def composite_quadratic(model: LipModel, loss: LossFunction, theta):
    """``(H, g, c)`` with ``l(u, f(u, theta)) = 0.5 u'Hu + g'u + c``, or None if not quadratic."""
    if isinstance(loss, QuadraticLoss):
        aff = model.affine_in_u(theta)
        if aff is not None:
            return loss.composite(*aff)
    if isinstance(loss, LinearLoss) and loss.input_cost is None:
        if hasattr(model, "quadratic_in_u") and model.output_dim == 1:
            H, g, c = model.quadratic_in_u(theta)
            return loss.c[0] * H, loss.c[0] * g, loss.c[0] * c
        aff = model.affine_in_u(theta)
        if aff is not None:
            G, h = aff
            return np.zeros((G.shape[1], G.shape[1])), G.T @ loss.c, float(loss.c @ h)
    return None


def minimize_composite(model, loss, domain: BoxDomain, theta, seed=0, starts: int = 8):
    """Minimize ``u -> l(u, f(u, theta))`` over the box; exact for convex quadratic composites."""
    quad = composite_quadratic(model, loss, theta)
    if quad is not None:
        H, g, c = quad
        return minimize_box_quadratic(H, g, domain.lower, domain.upper, c, seed=seed, starts=starts)

    def fun(u):
        z = model.predict(u, theta)
        grad = loss.grad_u(u, z) + model.output_jacobian(u, theta).T @ loss.grad_z(u, z)
        return loss.value(u, z), grad

    x0s = list(domain.latin_hypercube(starts, seed=seed))
    if domain.dim == 1:
        grid = domain.grid(512)
        x0s.append(grid[int(np.argmin([fun(x)[0] for x in grid]))])
    best = None
    for x0 in x0s:
        res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=list(zip(domain.lower, domain.upper)))
        x = domain.project(res.x)
        val = fun(x)[0]
        if best is None or val < best[1]:
            best = (x, val)
    return best


class Strategy:
    kind: str = ""
    observes: str = "output"
    posterior: Optional[GaussianPosterior] = None
    true_parameters: Optional[np.ndarray] = None

    def __init__(self):
        self.history = History()

    def propose(self) -> Proposal:
        raise NotImplementedError

    def observe(self, u, y) -> None:
        raise NotImplementedError

    def current_gamma(self) -> float:
        return float("nan")


class _BayesianStrategy(Strategy):
    def __init__(self, model: LipModel, loss: LossFunction, domain: BoxDomain, noise: NoiseModel,
                 sigma0: float = 1.0, seed: int = 0, observes: str = "output", true_parameters=None):
        super().__init__()
        if noise.output_dim != model.output_dim:
            raise ValueError("noise model does not match the model output dimension")
        self.model, self.loss, self.domain, self.noise = model, loss, domain, noise
        self.posterior = GaussianPosterior.prior(model.param_dim, sigma0)
        self.seed = seed
        self.observes = observes
        self.true_parameters = None if true_parameters is None else np.asarray(true_parameters, float)

    def observe(self, u, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if y.shape != (self.model.output_dim,):
            raise ValueError(f"{self.kind} expects observations of dimension {self.model.output_dim}")
        self.posterior = update_posterior(self.posterior, self.model, self.noise, u, y)
        self.history.append(u, y)


class LcbStrategy(_BayesianStrategy):
    """Evaluate at a minimizer of the acquisition for the current confidence radius."""

    def __init__(self, model, loss, domain, noise, schedule: GammaSchedule, sigma0=1.0, seed=0,
                 starts: int = 16, grid_points: int = 512, kind: str = "lcb_structured",
                 observes: str = "output", true_parameters=None):
        super().__init__(model, loss, domain, noise, sigma0, seed, observes, true_parameters)
        self.schedule = schedule
        self.starts = starts
        self.grid_points = grid_points
        self.kind = kind

    def current_gamma(self) -> float:
        return self.schedule(len(self.history), self.posterior)

    def acquisition(self) -> AcquisitionProblem:
        return AcquisitionProblem(self.loss, self.model, self.posterior, self.current_gamma(), self.domain)

    def propose(self) -> Proposal:
        prob = self.acquisition()
        extra = []
        if self.history.inputs:
            extra.append(self.history.inputs[-1])
        if self.domain.dim > 1:
            quad = composite_quadratic(self.model, self.loss, self.posterior.mean)
            if quad is not None:
                extra.append(minimize_box_quadratic(*quad[:2], self.domain.lower, self.domain.upper)[0])
        rep = minimize_acquisition(prob, self.starts, np.random.SeedSequence([self.seed, len(self.history)]),
                                   self.grid_points, extra)
        return Proposal(rep.u_opt, rep.q_value, prob.gamma, rep.z_opt, rep.converged)


class ThompsonStrategy(_BayesianStrategy):
    """Minimize the objective induced by one posterior sample."""

    def __init__(self, model, loss, domain, noise, sigma0=1.0, seed=0, starts: int = 8,
                 kind: str = "ts_structured", observes: str = "output", true_parameters=None):
        super().__init__(model, loss, domain, noise, sigma0, seed, observes, true_parameters)
        self.rng = np.random.default_rng(np.random.SeedSequence([seed]))
        self.starts = starts
        self.kind = kind

    def propose(self) -> Proposal:
        theta = sample_parameters(self.posterior, self.rng)
        u, val = minimize_composite(self.model, self.loss, self.domain, theta,
                                    seed=np.random.SeedSequence([self.seed, len(self.history)]),
                                    starts=self.starts)
        return Proposal(u, val)


class ZooIlcStrategy(Strategy):
    """Zero-order ILC: minimize ``l(u, G u + h + c)`` with ``c <- (1 - alpha) c + alpha e``."""

    kind = "zoo_ilc"

    def __init__(self, G, h, loss: QuadraticLoss, domain: BoxDomain, alpha: float = 0.8):
        super().__init__()
        if not (0.0 < alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        self.G = np.atleast_2d(np.asarray(G, float))
        self.h = np.asarray(h, float)
        self.loss, self.domain, self.alpha = loss, domain, alpha
        self.correction = np.zeros(self.G.shape[0])

    def propose(self) -> Proposal:
        H, g, c = self.loss.composite(self.G, self.h + self.correction)
        try:
            np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            raise ValueError("ZOO-ILC subproblem is not strictly convex; check the loss weights") from None
        u, val = minimize_box_quadratic(H, g, self.domain.lower, self.domain.upper, c)
        return Proposal(u, val)

    def observe(self, u, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if y.shape != self.correction.shape:
            raise ValueError("observation dimension mismatch")
        error = y - self.G @ np.atleast_1d(u) - self.h
        self.correction = (1.0 - self.alpha) * self.correction + self.alpha * error
        self.history.append(u, y)


def surrogate_true_parameters(problem: Problem) -> Optional[np.ndarray]:
    """Surrogate parameters reproducing ``phi*`` exactly, when the truth is an affine plant."""
    sur = problem.surrogate
    if sur is None or not isinstance(problem.loss, QuadraticLoss):
        return None
    aff = problem.model.affine_in_u(problem.truth.theta_star)
    if aff is None:
        return None
    H, g, c = problem.loss.composite(*aff)
    return sur.parameters_for(H - sur.nominal_H, g - sur.nominal_g, c - sur.nominal_c)


def prior_scale(theta) -> float:
    """Root-mean-square of a parameter vector (floored to keep the prior proper)."""
    theta = np.asarray(theta, float)
    return max(float(np.sqrt(np.mean(theta**2))), 1e-12)


def default_schedule(kind: str, problem: Problem, agnostic: bool, delta=0.1, theta_bar=None,
                     sigma0=1.0, value=1.0) -> GammaSchedule:
    """Build a gamma schedule; ``theta_bar=None`` means twice the norm of the true parameters."""
    if kind in ("data_dependent", "data_independent") and theta_bar is None:
        truth = surrogate_true_parameters(problem) if agnostic else problem.truth.theta_star
        if truth is None:
            raise ValueError("theta_bar must be supplied when the true parameters are unknown")
        theta_bar = 2.0 * float(np.linalg.norm(truth))
    if agnostic:
        sur = problem.surrogate
        d, m = sur.param_dim, 1
        a_bar = sur.frobenius_bound(problem.domain, 1024)
    else:
        d, m, a_bar = problem.model.param_dim, problem.model.output_dim, problem.a_bar
    return GammaSchedule(kind, delta, theta_bar, sigma0, d, m, a_bar, value)


def make_strategy(kind: str, problem: Problem, *, gamma: str = "log_heuristic", gamma_value: float = 1.0,
                  delta: float = 0.1, theta_bar=None, sigma0=1.0, sigma_v: float = 1.0,
                  starts: int = 16, grid_points: int = 512, seed: int = 0, alpha: float = 0.8,
                  ts_starts: int = 8) -> Strategy:
    """Instantiate a strategy by name for a benchmark problem.

    ``sigma0="auto"`` sets the prior standard deviation to the root-mean-square
    of the true parameters of the chosen model class, so structured and agnostic
    priors are scaled by the same rule.
    """
    if kind not in STRATEGY_KINDS:
        raise ValueError(f"unknown strategy {kind!r}; choose from {STRATEGY_KINDS}")
    if kind == "zoo_ilc":
        G, h = problem.nominal
        return ZooIlcStrategy(G, h, problem.loss, problem.domain, alpha)
    agnostic = kind.endswith("agnostic")
    if agnostic:
        if problem.surrogate is None:
            raise ValueError(f"problem {problem.name!r} has no agnostic surrogate")
        model, loss, observes = problem.surrogate, LinearLoss(1.0), "cost"
        truth = surrogate_true_parameters(problem)
    else:
        model, loss, observes = problem.model, problem.loss, "output"
        truth = problem.truth.theta_star
    if isinstance(sigma0, str):
        if sigma0 != "auto":
            raise ValueError(f"sigma0 must be a positive number or 'auto', got {sigma0!r}")
        if truth is None:
            raise ValueError("sigma0='auto' needs known true parameters")
        sigma0 = prior_scale(truth)
    noise = NoiseModel.isotropic(sigma_v, model.output_dim)
    if kind.startswith("lcb"):
        schedule = default_schedule(gamma, problem, agnostic, delta, theta_bar, sigma0, gamma_value)
        return LcbStrategy(model, loss, problem.domain, noise, schedule, sigma0, seed, starts, grid_points,
                           kind, observes, truth)
    return ThompsonStrategy(model, loss, problem.domain, noise, sigma0, seed, ts_starts, kind, observes, truth)
