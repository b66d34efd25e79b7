"""Experiment configuration files.

The format is INI (``configparser``) with a strict schema::

    [experiment]
    problem = oscillator_ilc
    iterations = 150
    seed = 0
    noise_sigma = 0.0
    output = results/ilc

    [strategy:lcb]
    kind = lcb_structured
    gamma = log_heuristic
    sigma0 = auto
    sigma_v = 1e-6
    starts = 64

    [strategy:ts]
    kind = ts_structured
    reps = 20

A ``[problem]`` section defines a custom affine problem (``problem = custom``).
Matrices are written row by row with ``;`` between rows. Unknown sections or
keys are rejected with the offending line number.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .model import GAMMA_KINDS
from .problems import PROBLEMS
from .strategies import STRATEGY_KINDS


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is the 1-based line of the offending entry when known."""

    def __init__(self, message: str, line: Optional[int] = None, source: str = "<config>"):
        self.line = line
        self.source = source
        loc = f"{source}:{line}" if line is not None else source
        super().__init__(f"{loc}: {message}")


@dataclass(frozen=True)
class StrategyConfig:
    name: str
    kind: str
    gamma: str = "log_heuristic"
    gamma_value: float = 1.0
    delta: float = 0.1
    theta_bar: Optional[float] = None
    sigma0: Union[float, str] = 1.0
    sigma_v: float = 1.0
    starts: int = 16
    grid_points: int = 512
    ts_starts: int = 8
    alpha: float = 0.8
    reps: int = 1

    @property
    def stochastic(self) -> bool:
        return self.kind.startswith("ts_")


@dataclass(frozen=True)
class ProblemConfig:
    B: tuple
    b: tuple
    B_nominal: tuple
    b_nominal: tuple
    output_weight: tuple
    lower: tuple
    upper: tuple
    reference: float = 0.0
    input_weight: float = 0.0
    lower_triangular: bool = False

    def build(self, name: str = "custom"):
        from .problems import BoxDomain, QuadraticLoss, affine_problem

        B, Bn = np.array(self.B, float), np.array(self.B_nominal, float)
        loss = QuadraticLoss(np.array(self.output_weight, float), self.reference, self.input_weight,
                             input_dim=B.shape[1])
        return affine_problem(name, B, np.array(self.b, float), Bn, np.array(self.b_nominal, float), loss,
                              BoxDomain(self.lower, self.upper), self.lower_triangular)


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    iterations: int
    strategies: tuple
    seed: int = 0
    noise_sigma: float = 0.0
    output: str = "results"
    custom_problem: Optional[ProblemConfig] = None

    def build_problem(self):
        from .problems import get_problem

        if self.problem == "custom":
            return self.custom_problem.build()
        return get_problem(self.problem)

    def with_overrides(self, seed=None, reps=None, output=None) -> "ExperimentConfig":
        """Apply CLI overrides; ``reps`` changes the repetition count of Thompson strategies."""
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        if output is not None:
            cfg = replace(cfg, output=str(output))
        if reps is not None:
            if reps < 1:
                raise ConfigError("reps must be >= 1")
            cfg = replace(cfg, strategies=tuple(replace(s, reps=reps) if s.stochastic else s
                                                for s in cfg.strategies))
        return cfg

    def to_text(self) -> str:
        return format_config(self)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_EXPERIMENT_KEYS = {"problem", "iterations", "seed", "noise_sigma", "output"}
_STRATEGY_KEYS = {f.name for f in fields(StrategyConfig)} - {"name"}
_PROBLEM_KEYS = {f.name for f in fields(ProblemConfig)}
_ZOO_ONLY = {"alpha"}
_BAYES_ONLY = {"sigma0", "sigma_v"}
_LCB_ONLY = {"gamma", "gamma_value", "delta", "theta_bar", "starts", "grid_points"}
_TS_ONLY = {"ts_starts"}


def _line_index(text: str) -> dict:
    """Map ``(section, key)`` and ``(section, None)`` to 1-based line numbers."""
    index, section = {}, None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            index.setdefault((section, None), i)
        elif section is not None and raw[:1] not in (" ", "\t"):
            key = re.split(r"[=:]", line, maxsplit=1)[0].strip()
            index.setdefault((section, key), i)
    return index


class _Reader:
    def __init__(self, parser, lines, source):
        self.parser, self.lines, self.source = parser, lines, source

    def error(self, msg, section, key=None):
        line = self.lines.get((section, key), self.lines.get((section, None)))
        return ConfigError(msg, line, self.source)

    def raw(self, section, key):
        return self.parser.get(section, key)

    def number(self, section, key, kind=float, positive=False, nonneg=False):
        text = self.raw(section, key)
        try:
            val = kind(text)
        except ValueError:
            raise self.error(f"{key} must be {'an integer' if kind is int else 'a number'}, got {text!r}",
                             section, key) from None
        if kind is float and not np.isfinite(val):
            raise self.error(f"{key} must be finite", section, key)
        if positive and val <= 0:
            raise self.error(f"{key} must be positive", section, key)
        if nonneg and val < 0:
            raise self.error(f"{key} must be nonnegative", section, key)
        return val

    def vector(self, section, key):
        try:
            return tuple(float(x) for x in self.raw(section, key).replace(",", " ").split())
        except ValueError:
            raise self.error(f"{key} must be a list of numbers", section, key) from None

    def matrix(self, section, key):
        rows = [r for r in self.raw(section, key).split(";") if r.strip()]
        try:
            out = tuple(tuple(float(x) for x in r.replace(",", " ").split()) for r in rows)
        except ValueError:
            raise self.error(f"{key} must be a matrix of numbers", section, key) from None
        if not out or len({len(r) for r in out}) != 1:
            raise self.error(f"{key} rows must have equal, nonzero length", section, key)
        return out


def _check_keys(reader, section, allowed):
    for key in reader.parser.options(section):
        if key not in allowed:
            raise reader.error(f"unknown key {key!r} in [{section}]", section, key)


def _parse_strategy(reader: _Reader, section: str, name: str) -> StrategyConfig:
    _check_keys(reader, section, _STRATEGY_KEYS)
    p = reader.parser
    kind = p.get(section, "kind", fallback=name)
    if kind not in STRATEGY_KINDS:
        raise reader.error(f"unknown strategy kind {kind!r}; choose from {', '.join(STRATEGY_KINDS)}",
                           section, "kind" if p.has_option(section, "kind") else None)
    allowed = {"kind", "reps"}
    if kind == "zoo_ilc":
        allowed |= _ZOO_ONLY
    else:
        allowed |= _BAYES_ONLY | (_LCB_ONLY if kind.startswith("lcb") else _TS_ONLY)
    for key in p.options(section):
        if key not in allowed:
            raise reader.error(f"key {key!r} does not apply to strategy kind {kind!r}", section, key)
    kw = {"name": name, "kind": kind}
    for key in ("gamma_value", "sigma_v", "alpha"):
        if p.has_option(section, key):
            kw[key] = reader.number(section, key, float, nonneg=key == "gamma_value", positive=key != "gamma_value")
    if p.has_option(section, "delta"):
        kw["delta"] = reader.number(section, "delta", float, positive=True)
        if kw["delta"] > 1:
            raise reader.error("delta must lie in (0, 1]", section, "delta")
    if "alpha" in kw and kw["alpha"] > 1:
        raise reader.error("alpha must lie in (0, 1]", section, "alpha")
    for key in ("starts", "grid_points", "ts_starts", "reps"):
        if p.has_option(section, key):
            kw[key] = reader.number(section, key, int, nonneg=key == "grid_points", positive=key != "grid_points")
    if p.has_option(section, "gamma"):
        kw["gamma"] = p.get(section, "gamma")
        if kw["gamma"] not in GAMMA_KINDS:
            raise reader.error(f"gamma must be one of {', '.join(GAMMA_KINDS)}", section, "gamma")
    if p.has_option(section, "theta_bar"):
        if p.get(section, "theta_bar") != "auto":
            kw["theta_bar"] = reader.number(section, "theta_bar", float, positive=True)
    if p.has_option(section, "sigma0"):
        kw["sigma0"] = "auto" if p.get(section, "sigma0") == "auto" else reader.number(section, "sigma0", float,
                                                                                         positive=True)
    return StrategyConfig(**kw)


def _parse_problem(reader: _Reader) -> ProblemConfig:
    sec = "problem"
    _check_keys(reader, sec, _PROBLEM_KEYS)
    p = reader.parser
    required = ("B", "b", "B_nominal", "b_nominal", "output_weight", "lower", "upper")
    for key in required:
        if not p.has_option(sec, key):
            raise reader.error(f"[problem] is missing {key!r}", sec)
    kw = {
        "B": reader.matrix(sec, "B"),
        "B_nominal": reader.matrix(sec, "B_nominal"),
        "b": reader.vector(sec, "b"),
        "b_nominal": reader.vector(sec, "b_nominal"),
        "output_weight": reader.vector(sec, "output_weight"),
        "lower": reader.vector(sec, "lower"),
        "upper": reader.vector(sec, "upper"),
    }
    if p.has_option(sec, "reference"):
        kw["reference"] = reader.number(sec, "reference")
    if p.has_option(sec, "input_weight"):
        kw["input_weight"] = reader.number(sec, "input_weight", nonneg=True)
    if p.has_option(sec, "lower_triangular"):
        try:
            kw["lower_triangular"] = p.getboolean(sec, "lower_triangular")
        except ValueError:
            raise reader.error("lower_triangular must be a boolean", sec, "lower_triangular") from None
    m, n = len(kw["B"]), len(kw["B"][0])
    if (len(kw["B_nominal"]), len(kw["B_nominal"][0])) != (m, n):
        raise reader.error("B_nominal must have the shape of B", sec, "B_nominal")
    for key, size in (("b", m), ("b_nominal", m), ("output_weight", m), ("lower", n), ("upper", n)):
        if len(kw[key]) != size:
            raise reader.error(f"{key} must have {size} entries", sec, key)
    if any(lo > hi for lo, hi in zip(kw["lower"], kw["upper"])):
        raise reader.error("lower must not exceed upper", sec, "lower")
    if min(kw["output_weight"]) < 0:
        raise reader.error("output_weight entries must be nonnegative", sec, "output_weight")
    return ProblemConfig(**kw)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse configuration text; raises :class:`ConfigError` with line diagnostics.

    Keys are case-sensitive (``B`` and ``b`` are distinct problem entries).
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno, source) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno, source) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("expected a [section] header", exc.lineno, source) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", line, source) from None
    lines = _line_index(text)
    reader = _Reader(parser, lines, source)

    for sec in parser.sections():
        if sec not in ("experiment", "problem") and not sec.startswith("strategy:"):
            raise reader.error(f"unknown section [{sec}]", sec)
    if not parser.has_section("experiment"):
        raise ConfigError("missing [experiment] section", None, source)
    _check_keys(reader, "experiment", _EXPERIMENT_KEYS)
    for key in ("problem", "iterations"):
        if not parser.has_option("experiment", key):
            raise reader.error(f"[experiment] is missing {key!r}", "experiment")
    problem = parser.get("experiment", "problem")
    if problem != "custom" and problem not in PROBLEMS:
        raise reader.error(f"unknown problem {problem!r}; choose from {', '.join(sorted(PROBLEMS))} or custom",
                           "experiment", "problem")
    kw = {"problem": problem, "iterations": reader.number("experiment", "iterations", int, positive=True)}
    if parser.has_option("experiment", "seed"):
        kw["seed"] = reader.number("experiment", "seed", int, nonneg=True)
    if parser.has_option("experiment", "noise_sigma"):
        kw["noise_sigma"] = reader.number("experiment", "noise_sigma", float, nonneg=True)
    if parser.has_option("experiment", "output"):
        kw["output"] = parser.get("experiment", "output")

    if problem == "custom":
        if not parser.has_section("problem"):
            raise reader.error("problem = custom needs a [problem] section", "experiment", "problem")
        kw["custom_problem"] = _parse_problem(reader)
    elif parser.has_section("problem"):
        raise reader.error("[problem] is only allowed with problem = custom", "problem")

    strategies = []
    for sec in parser.sections():
        if sec.startswith("strategy:"):
            name = sec.split(":", 1)[1].strip()
            if not re.fullmatch(r"[A-Za-z0-9_.-]+", name):
                raise reader.error(f"strategy name {name!r} must use letters, digits, '_', '-' or '.'", sec)
            strategies.append(_parse_strategy(reader, sec, name))
    if not strategies:
        raise ConfigError("at least one [strategy:NAME] section is required", None, source)
    return ExperimentConfig(strategies=tuple(strategies), **kw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return parse_config(text, str(path))


# ---------------------------------------------------------------------------
# Formatting
# ---------------------------------------------------------------------------


def _num(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def _vec(v) -> str:
    return " ".join(_num(float(x)) for x in v)


def format_config(cfg: ExperimentConfig) -> str:
    """Canonical text; ``parse_config(format_config(c)) == c``."""
    out = ["[experiment]", f"problem = {cfg.problem}", f"iterations = {cfg.iterations}", f"seed = {cfg.seed}",
           f"noise_sigma = {_num(float(cfg.noise_sigma))}", f"output = {cfg.output}", ""]
    if cfg.custom_problem is not None:
        pc = cfg.custom_problem
        out += ["[problem]",
                "B = " + "; ".join(_vec(r) for r in pc.B),
                f"b = {_vec(pc.b)}",
                "B_nominal = " + "; ".join(_vec(r) for r in pc.B_nominal),
                f"b_nominal = {_vec(pc.b_nominal)}",
                f"output_weight = {_vec(pc.output_weight)}",
                f"reference = {_num(float(pc.reference))}",
                f"input_weight = {_num(float(pc.input_weight))}",
                f"lower = {_vec(pc.lower)}",
                f"upper = {_vec(pc.upper)}",
                f"lower_triangular = {'true' if pc.lower_triangular else 'false'}", ""]
    for s in cfg.strategies:
        out += [f"[strategy:{s.name}]", f"kind = {s.kind}"]
        if s.kind == "zoo_ilc":
            keys = ["alpha", "reps"]
        elif s.kind.startswith("lcb"):
            keys = ["gamma", "gamma_value", "delta", "theta_bar", "sigma0", "sigma_v", "starts", "grid_points",
                    "reps"]
        else:
            keys = ["sigma0", "sigma_v", "ts_starts", "reps"]
        for key in keys:
            val = getattr(s, key)
            if key == "theta_bar" and val is None:
                out.append("theta_bar = auto")
            elif isinstance(val, float) or (key in ("gamma_value", "delta", "sigma_v", "alpha", "sigma0")
                                            and not isinstance(val, str)):
                out.append(f"{key} = {_num(float(val))}")
            else:
                out.append(f"{key} = {val}")
        out.append("")
    return "\n".join(out)

