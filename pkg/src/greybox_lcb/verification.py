"""Executable checks of the posterior lemmas, the coverage theorem and the regret bound.

Each check returns a small report object with a ``passed`` flag and a
``to_dict`` method so the CLI can emit machine-readable results.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .model import (
    CallableLipModel,
    GammaSchedule,
    GaussianPosterior,
    NoiseModel,
    det_update_factors,
    update_posterior,
    update_posterior_scalarized,
)
from .problems import Problem, linear_bandit_problem
from .strategies import LcbStrategy

# relative slack for inequalities that are evaluated in floating point
INEQ_RTOL = 1e-9


def _slogdet(M) -> float:
    sign, val = np.linalg.slogdet(M)
    if sign <= 0:
        raise np.linalg.LinAlgError("matrix is not positive definite")
    return float(val)


# ---------------------------------------------------------------------------
# Random instances
# ---------------------------------------------------------------------------


def random_affine_model(rng, d: int, m: int):
    """``A(u) = A0 + u A1`` on ``[-1, 1]`` and its exact Frobenius bound (attained at an endpoint)."""
    A0 = rng.standard_normal((m, d))
    A1 = rng.standard_normal((m, d))
    model = CallableLipModel(lambda u: A0 + u[0] * A1, 1, m, d)
    a_bar = max(np.linalg.norm(A0 - A1), np.linalg.norm(A0 + A1))
    return model, float(a_bar)


def random_noise(rng, m: int) -> NoiseModel:
    return NoiseModel(rng.uniform(0.3, 2.0, m))


def random_posterior(rng, model, noise, sigma0: float, steps: int) -> GaussianPosterior:
    post = GaussianPosterior.prior(model.param_dim, sigma0)
    for _ in range(steps):
        u = rng.uniform(-1, 1, 1)
        post = update_posterior(post, model, noise, u, rng.standard_normal(model.output_dim))
    return post


# ---------------------------------------------------------------------------
# Lemma suite
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    instances: int
    failures: int
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def to_dict(self) -> dict:
        return {"name": self.name, "instances": int(self.instances), "failures": int(self.failures),
                "max_error": float(self.max_error), "tolerance": float(self.tolerance), "passed": bool(self.passed)}


def check_det_identity(n_instances: int = 1000, seed=0, tol: float = 1e-10) -> CheckResult:
    """``det Lambda' / det Lambda`` equals the product of the sequential update factors.

    The oracle is a direct log-determinant of both precisions; the factor for
    output ``i`` uses the covariance after rows ``1..i-1`` have been absorbed.
    """
    rng = np.random.default_rng(seed)
    worst, fails = 0.0, 0
    for _ in range(n_instances):
        d, m = int(rng.integers(1, 7)), int(rng.integers(1, 5))
        model, _ = random_affine_model(rng, d, m)
        noise = random_noise(rng, m)
        post = random_posterior(rng, model, noise, rng.uniform(0.5, 2.0), int(rng.integers(0, 4)))
        u = rng.uniform(-1, 1, 1)
        A = model.features(u)
        oracle = _slogdet(post.precision + A.T @ np.diag(noise.inv_var) @ A) - _slogdet(post.precision)
        lhs = float(np.sum(np.log(det_update_factors(post, model, noise, u))))
        err = abs(math.expm1(lhs - oracle))
        worst = max(worst, err)
        fails += err > tol
    return CheckResult("det_identity", n_instances, fails, worst, tol)


def check_det_ratio(n_trajectories: int = 100, steps: int = 20, seed=1, tol: float = 1e-8) -> CheckResult:
    """Telescoped factors over a trajectory match ``det Lambda_N / det Lambda_0``."""
    rng = np.random.default_rng(seed)
    worst, fails = 0.0, 0
    for _ in range(n_trajectories):
        d, m = int(rng.integers(1, 7)), int(rng.integers(1, 5))
        model, _ = random_affine_model(rng, d, m)
        noise = random_noise(rng, m)
        post0 = post = GaussianPosterior.prior(d, rng.uniform(0.5, 2.0))
        total = 0.0
        for _ in range(steps):
            u = rng.uniform(-1, 1, 1)
            total += float(np.sum(np.log(det_update_factors(post, model, noise, u))))
            post = update_posterior(post, model, noise, u, rng.standard_normal(m))
        oracle = _slogdet(post.precision) - _slogdet(post0.precision)
        err = max(abs(math.expm1(total - oracle)), abs(math.expm1(post.log_det_precision - _slogdet(post.precision))))
        worst = max(worst, err)
        fails += err > tol
    return CheckResult("det_ratio", n_trajectories, fails, worst, tol)


def check_log_det_bound(n_trajectories: int = 200, steps: int = 20, seed=2) -> CheckResult:
    """``ln(det Lambda_N / det Lambda_0) <= d ln(1 + sigma0^2 nu_v A_bar^2 N / d)`` at every N."""
    rng = np.random.default_rng(seed)
    worst, fails = -np.inf, 0
    for _ in range(n_trajectories):
        d, m = int(rng.integers(1, 7)), int(rng.integers(1, 5))
        model, a_bar = random_affine_model(rng, d, m)
        noise = random_noise(rng, m)
        sigma0 = rng.uniform(0.5, 2.0)
        post = post0 = GaussianPosterior.prior(d, sigma0)
        for n in range(1, steps + 1):
            post = update_posterior(post, model, noise, rng.uniform(-1, 1, 1), rng.standard_normal(m))
            lhs = post.log_det_precision - post0.log_det_precision
            rhs = d * math.log1p(sigma0**2 * noise.nu_v * a_bar**2 * n / d)
            worst = max(worst, lhs - rhs)
            fails += lhs > rhs * (1 + INEQ_RTOL)
    return CheckResult("log_det_bound", n_trajectories, fails, float(worst), 0.0)


def check_width_bound(n_instances: int = 200, seed=3, n_grid: int = 21, n_boundary: int = 20) -> CheckResult:
    """``||A(u)(theta - mu)|| <= gamma sqrt(||A Sigma A^T||_2)`` for theta on the ellipsoid boundary."""
    rng = np.random.default_rng(seed)
    worst, fails = -np.inf, 0
    grid = np.linspace(-1, 1, n_grid)
    for _ in range(n_instances):
        d, m = int(rng.integers(1, 7)), int(rng.integers(1, 5))
        model, _ = random_affine_model(rng, d, m)
        noise = random_noise(rng, m)
        post = random_posterior(rng, model, noise, rng.uniform(0.5, 2.0), int(rng.integers(0, 6)))
        gamma = rng.uniform(0.1, 5.0)
        w = rng.standard_normal((n_boundary, d))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        thetas = post.mean + gamma * w @ post.inv_chol_t.T
        for x in grid:
            A = model.features(np.array([x]))
            lhs = np.linalg.norm((thetas - post.mean) @ A.T, axis=1).max()
            rhs = gamma * math.sqrt(np.linalg.norm(A @ post.covariance @ A.T, 2))
            worst = max(worst, lhs - rhs)
            fails += lhs > rhs * (1 + INEQ_RTOL) + 1e-14
    return CheckResult("width_bound", n_instances, fails, float(worst), 0.0)


def check_scalarized(n_instances: int = 200, seed=4, tol: float = 1e-10) -> CheckResult:
    """Joint update equals ``m`` sequential scalar updates in mean and precision."""
    rng = np.random.default_rng(seed)
    worst, fails = 0.0, 0
    for _ in range(n_instances):
        d, m = int(rng.integers(1, 7)), int(rng.integers(1, 5))
        model, _ = random_affine_model(rng, d, m)
        noise = random_noise(rng, m)
        post = random_posterior(rng, model, noise, 1.0, int(rng.integers(0, 4)))
        u, y = rng.uniform(-1, 1, 1), rng.standard_normal(m)
        a = update_posterior(post, model, noise, u, y)
        b = update_posterior_scalarized(post, model, noise, u, y)
        err = max(np.abs(a.mean - b.mean).max() / max(1.0, np.abs(a.mean).max()),
                  np.abs(a.precision - b.precision).max() / np.abs(a.precision).max(),
                  abs(a.log_det_precision - b.log_det_precision) / max(1.0, abs(a.log_det_precision)))
        worst = max(worst, err)
        fails += err > tol
    return CheckResult("scalarized_update", n_instances, fails, worst, tol)


def run_lemma_suite(seed: int = 0, n_instances: int = 1000) -> list[CheckResult]:
    return [
        check_det_identity(n_instances, seed),
        check_det_ratio(100, 20, seed + 1),
        check_log_det_bound(200, 20, seed + 2),
        check_width_bound(200, seed + 3),
        check_scalarized(200, seed + 4),
    ]


# ---------------------------------------------------------------------------
# Coverage
# ---------------------------------------------------------------------------


@dataclass
class CoverageResult:
    runs: int
    failures: int
    delta: float
    first_failure_step: list = field(default_factory=list)

    @property
    def fraction(self) -> float:
        return self.failures / self.runs

    @property
    def slack(self) -> float:
        """Three binomial standard deviations around ``delta``."""
        return 3.0 * math.sqrt(self.delta * (1.0 - self.delta) / self.runs)

    @property
    def passed(self) -> bool:
        return self.fraction <= self.delta + self.slack

    def to_dict(self) -> dict:
        return {"runs": self.runs, "failures": self.failures, "fraction": self.fraction, "delta": self.delta,
                "slack": self.slack, "passed": self.passed}


def verify_simultaneous_containment(problem: Problem, schedule: GammaSchedule, runs: int = 500, N: int = 50,
                                    noise_sigma: float = 1.0, seed: int = 0, sigma_v: float = 1.0) -> CoverageResult:
    """Fraction of runs in which ``theta*`` leaves the parameter ellipsoid at some ``n <= N``.

    Actions are drawn uniformly from the input box; observations carry
    Gaussian noise of standard deviation ``noise_sigma``.
    """
    model, _, domain, truth = problem
    noise = NoiseModel.isotropic(sigma_v, model.output_dim)
    failures, first = 0, []
    for run in range(runs):
        rng = np.random.default_rng(np.random.SeedSequence([seed, run]))
        post = GaussianPosterior.prior(model.param_dim, schedule.sigma0)
        for n in range(N + 1):
            if post.mahalanobis(truth.theta_star) > schedule(n, post):
                failures += 1
                first.append(n)
                break
            if n == N:
                break
            u = rng.uniform(domain.lower, domain.upper)
            y = truth.f_star(u) + noise_sigma * rng.standard_normal(model.output_dim)
            post = update_posterior(post, model, noise, u, y)
    return CoverageResult(runs, failures, schedule.delta, first)


def coverage_problem(seed: int = 0, d: int = 2) -> Problem:
    """The ``d``-parameter scalar-output instance used for the coverage check."""
    return linear_bandit_problem(seed, d)


# ---------------------------------------------------------------------------
# Regret bound
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundContext:
    theta_bar: float
    sigma0: float
    a_bar: float
    nu_v: float
    d: int
    m: int
    lipschitz_z: float
    regret_scale: float

    def __post_init__(self):
        vals = (self.theta_bar, self.sigma0, self.a_bar, self.nu_v, self.lipschitz_z)
        if min(vals) < 0 or self.d < 1 or self.m < 1:
            raise ValueError("bound constants must be nonnegative")
        if self.regret_scale < 1:
            raise ValueError("regret scale must be at least 1")

    @property
    def c1(self) -> float:
        return math.sqrt(8.0) * self.lipschitz_z * self.regret_scale

    @property
    def squared_regret_coef(self) -> float:
        # 8 L_z^2 for L_z >= 1/2; the derivation only supports 2 max(1, 4 L_z^2) below that
        return 2.0 * max(1.0, 4.0 * self.lipschitz_z**2)

    def log_term(self, N: int) -> float:
        return self.d * math.log1p(self.m * N * self.a_bar**2 * self.sigma0**2 / self.d)

    def bound(self, N: int, gamma: float) -> float:
        return self.c1 * gamma * math.sqrt(N * self.log_term(N))

    @classmethod
    def from_problem(cls, problem: Problem, schedule: GammaSchedule, noise: NoiseModel) -> "BoundContext":
        return cls(schedule.theta_bar, schedule.sigma0, problem.a_bar, noise.nu_v, problem.model.param_dim,
                   problem.model.output_dim, problem.lipschitz_z, problem.regret_scale)


@dataclass
class RegretBoundReport:
    checked_prefixes: int
    theorem_violations: list = field(default_factory=list)
    corollary_violations: list = field(default_factory=list)
    cauchy_schwarz_violations: list = field(default_factory=list)
    squared_regret_violations: list = field(default_factory=list)
    step_violations: list = field(default_factory=list)
    max_ratio: float = 0.0

    @property
    def passed(self) -> bool:
        return not (self.theorem_violations or self.corollary_violations or self.cauchy_schwarz_violations
                    or self.squared_regret_violations or self.step_violations)

    def to_dict(self) -> dict:
        return {**asdict(self), "passed": self.passed}


def _le(a: float, b: float) -> bool:
    return a <= b + INEQ_RTOL * max(1.0, abs(b))


def verify_regret_bound(trace, ctx: BoundContext) -> RegretBoundReport:
    """Pathwise check of the regret bound and its intermediate inequalities.

    Only prefixes along which ``theta*`` stayed inside the confidence set are
    checked. At each such ``N``:

    * ``R_N <= c1 gamma_{N-1} sqrt(N log_term)`` with ``gamma_{N-1}`` the radius used
      for the last proposal, and ``R_N <= c1 max(1, gamma_N) sqrt(N log_term)``;
    * ``R_N <= sqrt(N sum r^2) <= L_z sqrt(N sum ||f*(u_n) - z_sol_n||^2)``;
    * ``sum r^2 <= 8 gamma_{N-1}^2 L_z^2 r_bar^2 sum_n sum_i ln(1 + a_i Sigma a_i^T)``
      (``8 L_z^2`` becomes ``2 max(1, 4 L_z^2)`` when ``L_z < 1/2``);
    * ``r_n <= L_z ||f*(u_n) - z_sol_n||`` for every step.
    """
    rep = RegretBoundReport(0)
    cum = sq = dev = width = 0.0
    for rec in trace.records:
        if not rec.contained:
            break
        N = rec.n
        r = rec.regret
        cum += r
        sq += r * r
        gap = float(np.linalg.norm(np.asarray(rec.f_star) - np.asarray(rec.z_sol)))
        dev += gap**2
        width += rec.width_log_sum
        rep.checked_prefixes += 1
        if not _le(r, ctx.lipschitz_z * gap):
            rep.step_violations.append(N)
        gam = max(rec.gamma, 1.0)
        thm = ctx.bound(N, gam)
        if not _le(cum, thm):
            rep.theorem_violations.append(N)
        if not _le(cum, ctx.bound(N, max(1.0, rec.gamma_after))):
            rep.corollary_violations.append(N)
        if not (_le(cum, math.sqrt(N * sq)) and _le(math.sqrt(N * sq), ctx.lipschitz_z * math.sqrt(N * dev))):
            rep.cauchy_schwarz_violations.append(N)
        if not _le(sq, ctx.squared_regret_coef * gam**2 * ctx.regret_scale**2 * width):
            rep.squared_regret_violations.append(N)
        if thm > 0:
            rep.max_ratio = max(rep.max_ratio, cum / thm)
    return rep


def regret_bound_instance(seed: int, N: int = 200, d: Optional[int] = None, delta: float = 0.1,
                          sigma0: float = 1.0, starts: int = 4):
    """Run structured LCB on a random linear-bandit instance and verify the regret bound pathwise."""
    from .harness import run_experiment

    rng = np.random.default_rng(np.random.SeedSequence([seed, 31]))
    d = int(rng.integers(1, 5)) if d is None else d
    problem = linear_bandit_problem(seed, d)
    noise = NoiseModel.isotropic(1.0, 1)
    schedule = GammaSchedule("data_dependent", delta, 2.0 * float(np.linalg.norm(problem.truth.theta_star)),
                             sigma0, d, 1, problem.a_bar)
    strat = LcbStrategy(problem.model, problem.loss, problem.domain, noise, schedule, sigma0, seed, starts,
                        kind="lcb_structured", true_parameters=problem.truth.theta_star)
    trace = run_experiment(problem, strat, N, noise_sigma=1.0, seed=seed)
    return trace, verify_regret_bound(trace, BoundContext.from_problem(problem, schedule, noise))


__all__ = [
    "BoundContext",
    "CheckResult",
    "CoverageResult",
    "RegretBoundReport",
    "check_det_identity",
    "check_det_ratio",
    "check_log_det_bound",
    "check_scalarized",
    "check_width_bound",
    "coverage_problem",
    "random_affine_model",
    "regret_bound_instance",
    "run_lemma_suite",
    "verify_regret_bound",
    "verify_simultaneous_containment",
]
