import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from greybox_lcb.config import (
    ConfigError,
    ExperimentConfig,
    ProblemConfig,
    StrategyConfig,
    format_config,
    load_config,
    parse_config,
)

BASIC = """\
[experiment]
problem = example1
iterations = 3

[strategy:lcb]
kind = lcb_structured
sigma_v = 1e-6
"""

CUSTOM = """\
[experiment]
problem = custom
iterations = 4

[problem]
B = 1 0; 0.5 1
b = 0.1 -0.2
B_nominal = 0.8 0; 0.4 0.9
b_nominal = 0 0
output_weight = 1 1
lower = -1 -1
upper = 1 1
reference = 0.5

[strategy:zoo]
kind = zoo_ilc
alpha = 1.0
"""


def test_parse_basic_defaults():
    cfg = parse_config(BASIC)
    assert (cfg.problem, cfg.iterations, cfg.seed, cfg.noise_sigma) == ("example1", 3, 0, 0.0)
    (s,) = cfg.strategies
    assert (s.name, s.kind, s.sigma_v, s.gamma, s.reps) == ("lcb", "lcb_structured", 1e-6, "log_heuristic", 1)


def test_kind_defaults_to_section_name():
    cfg = parse_config("[experiment]\nproblem = example1\niterations = 2\n[strategy:ts_agnostic]\n")
    assert cfg.strategies[0].kind == "ts_agnostic"


def test_custom_problem_builds():
    cfg = parse_config(CUSTOM)
    p = cfg.build_problem()
    np.testing.assert_allclose(p.notes["B_true"], [[1, 0], [0.5, 1]])
    assert p.domain.dim == 2 and p.model.output_dim == 2
    assert p.loss.value(np.zeros(2), np.full(2, 0.5)) == pytest.approx(0.0)


@pytest.mark.parametrize("text, line, fragment", [
    (BASIC + "bogus = 1\n", 8, "unknown key 'bogus'"),
    (BASIC.replace("iterations = 3", "iterations = three"), 3, "integer"),
    (BASIC.replace("iterations = 3", "iterations = 0"), 3, "positive"),
    (BASIC + "alpha = 0.5\n", 8, "does not apply"),
    (BASIC.replace("lcb_structured", "lcb_magic"), 6, "unknown strategy kind"),
    (BASIC.replace("example1", "nowhere"), 2, "unknown problem"),
    (BASIC + "[extra]\n", 8, "unknown section"),
    (BASIC + "delta = 2\n", 8, "delta"),
    (BASIC + "sigma_v = 1\n", 8, "duplicate key"),
    (CUSTOM.replace("b = 0.1 -0.2", "b = 0.1"), 7, "2 entries"),
    (CUSTOM.replace("B = 1 0; 0.5 1", "B = 1 0; 0.5"), 6, "equal"),
])
def test_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_config(text, "x.cfg")
    assert exc.value.line == line
    assert fragment in str(exc.value) and str(exc.value).startswith(f"x.cfg:{line}:")


@pytest.mark.parametrize("text", [
    "[experiment]\nproblem = example1\niterations = 3\n",
    "[strategy:a]\nkind = zoo_ilc\n",
    "problem = example1\n",
    CUSTOM.replace("problem = custom", "problem = example1"),
])
def test_structural_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


def test_overrides():
    cfg = parse_config(BASIC + "\n[strategy:ts]\nkind = ts_structured\n")
    new = cfg.with_overrides(seed=5, reps=7, output="o")
    assert (new.seed, new.output) == (5, "o")
    assert [s.reps for s in new.strategies] == [1, 7]
    with pytest.raises(ConfigError):
        cfg.with_overrides(reps=0)


def test_bundled_configs_round_trip():
    from importlib import resources

    for name in ("example1.cfg", "ilc.cfg"):
        text = (resources.files("greybox_lcb") / "configs" / name).read_text()
        cfg = parse_config(text)
        assert parse_config(format_config(cfg)) == cfg


finite = st.floats(-1e3, 1e3, allow_nan=False)
pos = st.floats(1e-8, 1e3, allow_nan=False)


@st.composite
def strategy_configs(draw, idx):
    kind = draw(st.sampled_from(["lcb_structured", "lcb_agnostic", "ts_structured", "ts_agnostic", "zoo_ilc"]))
    kw = {"name": f"s{idx}", "kind": kind, "reps": draw(st.integers(1, 5))}
    if kind == "zoo_ilc":
        kw["alpha"] = draw(st.floats(1e-3, 1.0))
    else:
        kw["sigma0"] = draw(st.one_of(st.just("auto"), pos))
        kw["sigma_v"] = draw(pos)
        if kind.startswith("lcb"):
            kw["gamma"] = draw(st.sampled_from(["data_dependent", "data_independent", "log_heuristic", "constant"]))
            kw["gamma_value"] = draw(st.floats(0, 10))
            kw["delta"] = draw(st.floats(1e-6, 1.0))
            kw["theta_bar"] = draw(st.one_of(st.none(), pos))
            kw["starts"] = draw(st.integers(1, 64))
            kw["grid_points"] = draw(st.integers(0, 1024))
        else:
            kw["ts_starts"] = draw(st.integers(1, 16))
    return StrategyConfig(**kw)


@st.composite
def experiment_configs(draw):
    n = draw(st.integers(1, 3))
    strategies = tuple(draw(strategy_configs(i)) for i in range(n))
    custom = None
    problem = draw(st.sampled_from(["example1", "oscillator_ilc", "custom"]))
    if problem == "custom":
        m, k = draw(st.integers(1, 3)), draw(st.integers(1, 3))
        mat = st.tuples(*[st.tuples(*[finite] * k)] * m)
        vec = st.tuples(*[finite] * m)
        lower = draw(st.tuples(*[st.floats(-5, 0)] * k))
        custom = ProblemConfig(draw(mat), draw(vec), draw(mat), draw(vec),
                               draw(st.tuples(*[st.floats(0, 10)] * m)), lower,
                               tuple(lo + 1.0 for lo in lower), draw(finite), draw(st.floats(0, 5)),
                               draw(st.booleans()))
    return ExperimentConfig(problem, draw(st.integers(1, 500)), strategies, draw(st.integers(0, 2**31)),
                            draw(st.floats(0, 10)), draw(st.from_regex(r"[a-z][a-z0-9_/]{0,12}", fullmatch=True)),
                            custom)


@settings(max_examples=100, deadline=None)
@given(experiment_configs())
def test_format_parse_round_trip(cfg):
    assert parse_config(format_config(cfg)) == cfg
