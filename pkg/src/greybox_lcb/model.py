"""Linear-in-parameters Bayesian regression with ellipsoidal confidence sets.

The posterior over the model parameters is stored in information form
(mean plus precision matrix) so that nearly noiseless observations remain
well conditioned. Covariances are only materialized through Cholesky solves.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

SCHEMA_VERSION = 1

SeedLike = Union[int, np.random.Generator, np.random.SeedSequence, None]


class CholeskyError(np.linalg.LinAlgError):
    """Raised when a precision matrix is numerically not positive definite."""


def _as_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _check_finite(name: str, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")


def _chol_lower(matrix: np.ndarray) -> np.ndarray:
    try:
        return cholesky(matrix, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise CholeskyError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


class LipModel:
    """Output model ``f(u, theta) = offset(u) + A(u) theta``.

    Subclasses implement :meth:`features` and may override :meth:`offset`,
    :meth:`output_jacobian` and :meth:`affine_in_u` with analytic versions.
    """

    input_dim: int
    output_dim: int
    param_dim: int

    def features(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def offset(self, u: np.ndarray) -> np.ndarray:
        return np.zeros(self.output_dim)

    def predict(self, u: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return self.offset(u) + self.features(u) @ theta

    def output_jacobian(self, u: np.ndarray, theta: np.ndarray, step: float = 1e-6) -> np.ndarray:
        """Jacobian of ``f(u, theta)`` with respect to ``u`` (central differences)."""
        u = np.asarray(u, dtype=float)
        jac = np.empty((self.output_dim, u.size))
        for j in range(u.size):
            e = np.zeros_like(u)
            e[j] = step
            jac[:, j] = (self.predict(u + e, theta) - self.predict(u - e, theta)) / (2 * step)
        return jac

    def affine_in_u(self, theta: np.ndarray) -> Optional[tuple[np.ndarray, np.ndarray]]:
        """Return ``(G, h)`` with ``f(u, theta) = G u + h`` if the model is affine in u."""
        return None

    def frobenius_bound(self, domain, n_grid: int = 1024) -> float:
        """Upper bound on ``max_u ||A(u)||_F`` from a dense sample of the domain."""
        return float(max(np.linalg.norm(self.features(u)) for u in domain.sample_points(n_grid)))


class CallableLipModel(LipModel):
    """LIP model assembled from plain callables."""

    def __init__(
        self,
        features: Callable[[np.ndarray], np.ndarray],
        input_dim: int,
        output_dim: int,
        param_dim: int,
        offset: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    ) -> None:
        self._features = features
        self._offset = offset
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.param_dim = param_dim

    def features(self, u):
        a = np.asarray(self._features(np.asarray(u, dtype=float)), dtype=float)
        return a.reshape(self.output_dim, self.param_dim)

    def offset(self, u):
        if self._offset is None:
            return np.zeros(self.output_dim)
        return np.asarray(self._offset(np.asarray(u, dtype=float)), dtype=float).reshape(self.output_dim)


class ConstantFeatureModel(LipModel):
    """``f(u, theta) = G u + h + A theta`` with a u-independent feature matrix."""

    def __init__(self, feature_matrix, input_matrix, input_offset=None) -> None:
        self.A = np.atleast_2d(np.asarray(feature_matrix, dtype=float))
        self.G = np.atleast_2d(np.asarray(input_matrix, dtype=float))
        self.output_dim, self.param_dim = self.A.shape
        self.input_dim = self.G.shape[1]
        self.h = np.zeros(self.output_dim) if input_offset is None else np.asarray(input_offset, float)

    def features(self, u):
        return self.A

    def offset(self, u):
        return self.G @ np.asarray(u, dtype=float) + self.h

    def output_jacobian(self, u, theta, step=None):
        return self.G

    def affine_in_u(self, theta):
        return self.G, self.h + self.A @ theta

    def frobenius_bound(self, domain, n_grid=1024):
        return float(np.linalg.norm(self.A))


# ---------------------------------------------------------------------------
# Noise and posterior
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    """Diagonal Gaussian observation noise with per-output standard deviations."""

    sigma_v: np.ndarray

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.sigma_v, dtype=float))
        if s.ndim != 1 or np.any(~np.isfinite(s)) or np.any(s <= 0):
            raise ValueError("sigma_v must be a vector of positive finite values")
        object.__setattr__(self, "sigma_v", s)

    @classmethod
    def isotropic(cls, sigma: float, m: int) -> "NoiseModel":
        return cls(np.full(m, float(sigma)))

    @property
    def output_dim(self) -> int:
        return self.sigma_v.size

    @property
    def inv_var(self) -> np.ndarray:
        return self.sigma_v**-2

    @property
    def nu_v(self) -> float:
        """Trace of the inverse noise covariance."""
        return float(np.sum(self.inv_var))


@dataclass(frozen=True, eq=False)
class GaussianPosterior:
    """Gaussian belief ``N(mean, precision^{-1})`` over the model parameters."""

    mean: np.ndarray
    precision: np.ndarray
    log_det_precision: float

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        prec = np.asarray(self.precision, dtype=float)
        if prec.shape != (mean.size, mean.size):
            raise ValueError("precision must be a d x d matrix matching the mean")
        _check_finite("mean", mean)
        _check_finite("precision", prec)
        scale = max(np.max(np.abs(prec)), 1e-300)
        if np.max(np.abs(prec - prec.T)) > 1e-10 * scale:
            raise ValueError("precision matrix is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", 0.5 * (prec + prec.T))
        object.__setattr__(self, "log_det_precision", float(self.log_det_precision))

    @classmethod
    def prior(cls, d: int, sigma0: float = 1.0, mean=None) -> "GaussianPosterior":
        """Isotropic prior ``N(mean, sigma0^2 I)``."""
        if sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        mu = np.zeros(d) if mean is None else np.asarray(mean, dtype=float)
        return cls(mu, np.eye(d) / sigma0**2, -2.0 * d * math.log(sigma0))

    @property
    def dim(self) -> int:
        return self.mean.size

    @cached_property
    def chol(self) -> np.ndarray:
        """Lower Cholesky factor ``L`` with ``precision = L L^T``."""
        return _chol_lower(self.precision)

    @cached_property
    def inv_chol_t(self) -> np.ndarray:
        """``L^{-T}``; maps unit-ball coordinates to parameter offsets."""
        return solve_triangular(self.chol, np.eye(self.dim), lower=True, trans="T", check_finite=False)

    @cached_property
    def covariance(self) -> np.ndarray:
        S = cho_solve((self.chol, True), np.eye(self.dim), check_finite=False)
        return 0.5 * (S + S.T)

    def mahalanobis(self, theta: np.ndarray) -> float:
        """``||theta - mean||`` in the precision metric."""
        diff = np.asarray(theta, dtype=float) - self.mean
        return float(np.linalg.norm(self.chol.T @ diff))

    def contains(self, theta: np.ndarray, gamma: float) -> bool:
        return self.mahalanobis(theta) <= gamma

    def output_mean(self, model: LipModel, u) -> np.ndarray:
        return model.predict(u, self.mean)

    def output_covariance(self, model: LipModel, u) -> np.ndarray:
        K = model.features(u) @ self.inv_chol_t
        return K @ K.T

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        rows, cols = np.tril_indices(self.dim)
        return {
            "version": SCHEMA_VERSION,
            "dim": self.dim,
            "mean": self.mean.tolist(),
            "precision_lower": self.precision[rows, cols].tolist(),
            "log_det_precision": self.log_det_precision,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "GaussianPosterior":
        if record.get("version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported posterior record version {record.get('version')!r}")
        d = int(record["dim"])
        lower = np.asarray(record["precision_lower"], dtype=float)
        if lower.size != d * (d + 1) // 2:
            raise ValueError("precision_lower has the wrong length")
        prec = np.zeros((d, d))
        prec[np.tril_indices(d)] = lower
        prec = prec + np.tril(prec, -1).T
        return cls(np.asarray(record["mean"], dtype=float), prec, float(record["log_det_precision"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "GaussianPosterior":
        return cls.from_dict(json.loads(text))


def _validate_observation(post, model, noise, u, y):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if y.shape != (model.output_dim,):
        raise ValueError(f"observation must have dimension {model.output_dim}, got {y.shape}")
    if noise.output_dim != model.output_dim:
        raise ValueError("noise model and LIP model disagree on the output dimension")
    if model.param_dim != post.dim:
        raise ValueError("posterior and LIP model disagree on the parameter dimension")
    _check_finite("u", u)
    _check_finite("y", y)
    A = np.asarray(model.features(u), dtype=float)
    _check_finite("features", A)
    return u, y, A, y - model.offset(u)


def update_posterior(
    post: GaussianPosterior, model: LipModel, noise: NoiseModel, u, y
) -> GaussianPosterior:
    """Condition ``post`` on one (possibly multivariate) observation ``y`` at ``u``.

    The log-determinant is advanced with the sequential determinant factors,
    obtained here from the Cholesky pivots of ``I + S^{1/2} A Sigma A^T S^{1/2}``.
    """
    u, y, A, resid = _validate_observation(post, model, noise, u, y)
    w = noise.inv_var
    prec = post.precision + A.T @ (w[:, None] * A)
    info = post.precision @ post.mean + A.T @ (w * resid)
    L = _chol_lower(0.5 * (prec + prec.T))
    mean = cho_solve((L, True), info, check_finite=False)
    log_det = post.log_det_precision + float(np.sum(np.log(det_update_factors(post, model, noise, u))))
    new = GaussianPosterior(mean, prec, log_det)
    new.__dict__["chol"] = L
    return new


def det_update_factors(post: GaussianPosterior, model: LipModel, noise: NoiseModel, u) -> np.ndarray:
    """Per-row factors ``1 + a_i Sigma_{n,i} a_i^T / sigma_i^2`` of a multivariate update.

    ``Sigma_{n,i}`` is the covariance after the first ``i-1`` scalar updates of
    the same observation; the product of the factors equals the determinant
    ratio of the precision matrices.
    """
    A = np.asarray(model.features(np.atleast_1d(np.asarray(u, dtype=float))), dtype=float)
    G = (noise.sigma_v**-1)[:, None] * (A @ post.inv_chol_t)
    M = np.eye(A.shape[0]) + G @ G.T
    return np.diag(_chol_lower(M)) ** 2


def update_posterior_scalarized(
    post: GaussianPosterior, model: LipModel, noise: NoiseModel, u, y
) -> GaussianPosterior:
    """Same update as :func:`update_posterior`, applied as ``m`` rank-one scalar updates."""
    u, y, A, resid = _validate_observation(post, model, noise, u, y)
    prec = post.precision.copy()
    info = post.precision @ post.mean
    log_det = post.log_det_precision
    for a, r, s in zip(A, resid, noise.sigma_v):
        L = _chol_lower(prec)
        q = float(a @ cho_solve((L, True), a, check_finite=False))
        log_det += math.log1p(q / s**2)
        prec = prec + np.outer(a, a) / s**2
        info = info + a * (r / s**2)
    L = _chol_lower(prec)
    mean = cho_solve((L, True), info, check_finite=False)
    return GaussianPosterior(mean, prec, log_det)


def sample_parameters(post: GaussianPosterior, rng_seed: SeedLike = None) -> np.ndarray:
    """Draw ``theta ~ N(mean, precision^{-1})``; deterministic for a fixed seed."""
    rng = _as_rng(rng_seed)
    xi = rng.standard_normal(post.dim)
    return post.mean + post.inv_chol_t @ xi


# ---------------------------------------------------------------------------
# Confidence sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConfidenceEllipsoid:
    """Image of the parameter ellipsoid ``||theta - mu||_Lambda <= radius`` under the model.

    The set is ``{center + radius * generator @ w : ||w|| <= 1}``; ``shape`` is
    ``generator @ generator.T`` and may be singular.
    """

    center: np.ndarray
    generator: np.ndarray
    radius: float

    @property
    def shape(self) -> np.ndarray:
        return self.generator @ self.generator.T

    def contains(self, z, rtol: float = 1e-9) -> bool:
        delta = np.asarray(z, dtype=float) - self.center
        scale = max(1.0, float(np.linalg.norm(self.center)))
        if self.radius == 0.0 or not np.any(self.generator):
            return bool(np.linalg.norm(delta) <= rtol * scale)
        w, *_ = np.linalg.lstsq(self.generator, delta, rcond=None)
        resid = np.linalg.norm(self.generator @ w - delta)
        return bool(resid <= rtol * scale and np.linalg.norm(w) <= self.radius * (1 + rtol) + rtol)

    def sample_boundary(self, rng: SeedLike, n: int = 1) -> np.ndarray:
        rng = _as_rng(rng)
        w = rng.standard_normal((n, self.generator.shape[1]))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        return self.center + self.radius * w @ self.generator.T


def output_confidence_set(post: GaussianPosterior, model: LipModel, u, gamma: float) -> ConfidenceEllipsoid:
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    u = np.atleast_1d(np.asarray(u, dtype=float))
    _check_finite("u", u)
    K = model.features(u) @ post.inv_chol_t
    return ConfidenceEllipsoid(model.predict(u, post.mean), K, float(gamma))


# ---------------------------------------------------------------------------
# Gamma schedules
# ---------------------------------------------------------------------------

GAMMA_KINDS = ("data_dependent", "data_independent", "log_heuristic", "constant")


@dataclass(frozen=True)
class GammaSchedule:
    """Confidence-radius schedule ``n -> gamma_n``.

    ``data_dependent`` and ``data_independent`` are the simultaneous-coverage
    radii for LIP models; ``log_heuristic`` is ``ln(e + n)``.
    """

    kind: str
    delta: float = 0.1
    theta_bar: Optional[float] = None
    sigma0: float = 1.0
    d: Optional[int] = None
    m: Optional[int] = None
    a_bar: Optional[float] = None
    value: float = 1.0

    def __post_init__(self):
        if self.kind not in GAMMA_KINDS:
            raise ValueError(f"unknown gamma schedule kind {self.kind!r}")
        if not (0.0 < self.delta <= 1.0):
            raise ValueError("delta must lie in (0, 1]")
        if self.kind in ("data_dependent", "data_independent") and self.theta_bar is None:
            raise ValueError(f"{self.kind} schedule requires theta_bar")
        if self.kind == "data_independent" and None in (self.d, self.m, self.a_bar):
            raise ValueError("data_independent schedule requires d, m and a_bar")
        if self.kind == "constant" and self.value < 0:
            raise ValueError("constant gamma must be nonnegative")

    def __call__(self, n: int, post: Optional[GaussianPosterior] = None) -> float:
        return gamma_value(self, n, post)


def gamma_value(schedule: GammaSchedule, n: int, post: Optional[GaussianPosterior] = None) -> float:
    if n < 0:
        raise ValueError("iteration index must be nonnegative")
    kind = schedule.kind
    if kind == "constant":
        return float(schedule.value)
    if kind == "log_heuristic":
        return math.log(math.e + n)
    base = schedule.theta_bar / schedule.sigma0
    conf = 2.0 * math.log(1.0 / schedule.delta)
    if kind == "data_dependent":
        if post is None:
            raise ValueError("data_dependent schedule needs the current posterior")
        ratio = 2 * post.dim * math.log(schedule.sigma0) + post.log_det_precision
        return base + math.sqrt(max(conf + ratio, 0.0))
    d, m, a_bar = schedule.d, schedule.m, schedule.a_bar
    return base + math.sqrt(conf + d * math.log1p(m * n * a_bar**2 * schedule.sigma0**2 / d))
