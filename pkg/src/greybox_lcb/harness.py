"""Experiment loop, regret accounting and trace files."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .problems import Problem
from .strategies import Strategy

log = logging.getLogger(__name__)


@dataclass
class TraceRecord:
    n: int
    u: np.ndarray
    y: np.ndarray
    phi: float
    regret: float
    cum_regret: float
    gamma: float
    q_value: float
    contained: Optional[bool]
    # in-memory only; used by the bound checks
    z_sol: Optional[np.ndarray] = None
    f_star: Optional[np.ndarray] = None
    width_log_sum: float = float("nan")
    gamma_after: float = float("nan")


@dataclass
class RegretTrace:
    strategy: str
    seed: int
    input_dim: int
    obs_dim: int
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def regret(self) -> np.ndarray:
        return np.array([r.regret for r in self.records])

    @property
    def cum_regret(self) -> np.ndarray:
        return np.array([r.cum_regret for r in self.records])

    @property
    def inputs(self) -> np.ndarray:
        return np.array([r.u for r in self.records]).reshape(len(self.records), self.input_dim)


def _width_log_sum(strategy: Strategy, u) -> float:
    """``sum_i ln(1 + a_i Sigma a_i^T)`` under the current posterior (unit noise scale)."""
    post = getattr(strategy, "posterior", None)
    if post is None:
        return float("nan")
    K = strategy.model.features(u) @ post.inv_chol_t
    return float(np.sum(np.log1p(np.sum(K * K, axis=1))))


def run_experiment(problem: Problem, strategy: Strategy, N: int, noise_sigma: float = 0.0,
                   seed: int = 0, name: Optional[str] = None) -> RegretTrace:
    """Alternate propose / evaluate / observe for ``N`` iterations and account regret."""
    if N < 1:
        raise ValueError("N must be >= 1")
    truth = problem.truth
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
    obs_dim = problem.model.output_dim if strategy.observes == "output" else 1
    trace = RegretTrace(name or strategy.kind, seed, problem.domain.dim, obs_dim)
    cum = 0.0
    for n in range(1, N + 1):
        prop = strategy.propose()
        if not prop.converged:
            log.warning("%s: acquisition solver did not converge at iteration %d", trace.strategy, n)
        u = problem.domain.project(prop.u)
        contained = None
        post = getattr(strategy, "posterior", None)
        if post is not None and strategy.true_parameters is not None and not math.isnan(prop.gamma):
            contained = post.mahalanobis(strategy.true_parameters) <= prop.gamma
        width = _width_log_sum(strategy, u)
        f = truth.f_star(u)
        phi = truth.phi_star(u)
        regret = phi - truth.phi_star_min
        cum += regret
        if strategy.observes == "output":
            y = f + noise_sigma * rng.standard_normal(f.size) if noise_sigma > 0 else f.copy()
        else:
            y = np.array([phi + (noise_sigma * rng.standard_normal() if noise_sigma > 0 else 0.0)])
        strategy.observe(u, y)
        trace.records.append(TraceRecord(n, u, y, phi, regret, cum, prop.gamma, prop.q_value, contained,
                                         prop.z_sol, f, width, strategy.current_gamma()))
    return trace


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def trace_header(input_dim: int, obs_dim: int) -> list[str]:
    return (["n"] + [f"u{i + 1}" for i in range(input_dim)] + [f"y{i + 1}" for i in range(obs_dim)]
            + ["phi", "regret", "cum_regret", "gamma", "q_value", "contained"])


def _fmt(x: float) -> str:
    return repr(float(x))


def export_trace(trace: RegretTrace, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(trace.input_dim, trace.obs_dim))
        for r in trace.records:
            flag = "" if r.contained is None else str(int(bool(r.contained)))
            w.writerow([r.n] + [_fmt(x) for x in r.u] + [_fmt(x) for x in r.y]
                       + [_fmt(r.phi), _fmt(r.regret), _fmt(r.cum_regret), _fmt(r.gamma), _fmt(r.q_value), flag])
    return path


def read_trace(path, strategy: Optional[str] = None, seed: int = 0) -> RegretTrace:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty trace file")
    header = rows[0]
    n_u = sum(1 for h in header if h.startswith("u"))
    n_y = sum(1 for h in header if h.startswith("y"))
    if header != trace_header(n_u, n_y):
        raise ValueError(f"{path}: unexpected header")
    trace = RegretTrace(strategy or path.stem, seed, n_u, n_y)
    for row in rows[1:]:
        vals = row[1:-1]
        u = np.array(vals[:n_u], dtype=float)
        y = np.array(vals[n_u:n_u + n_y], dtype=float)
        phi, regret, cum, gamma, q = (float(v) for v in vals[n_u + n_y:])
        flag = None if row[-1] == "" else bool(int(row[-1]))
        trace.records.append(TraceRecord(int(row[0]), u, y, phi, regret, cum, gamma, q, flag))
    return trace
