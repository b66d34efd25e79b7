import numpy as np
import pytest

from greybox_lcb.harness import export_trace, read_trace, run_experiment, trace_header
from greybox_lcb.model import GammaSchedule, NoiseModel
from greybox_lcb.problems import linear_bandit_problem
from greybox_lcb.strategies import LcbStrategy, Proposal, Strategy, make_strategy
from greybox_lcb.verification import BoundContext, RegretBoundReport, verify_regret_bound


class OracleStrategy(Strategy):
    """Always plays the known optimum."""

    kind = "oracle"

    def __init__(self, u_star):
        super().__init__()
        self.u_star = np.asarray(u_star, float)

    def propose(self):
        return Proposal(self.u_star.copy())

    def observe(self, u, y):
        self.history.append(u, y)


def test_trace_invariants(example1):
    tr = run_experiment(example1, make_strategy("lcb_structured", example1, sigma_v=1e-6), 5)
    assert [r.n for r in tr.records] == [1, 2, 3, 4, 5]
    assert np.all(tr.regret >= -1e-12)
    np.testing.assert_allclose(tr.cum_regret, np.cumsum(tr.regret), rtol=1e-14)
    for r in tr.records:
        assert example1.domain.contains(r.u)
        assert r.phi == pytest.approx(example1.truth.phi_star(r.u), rel=1e-14)
        assert r.regret == pytest.approx(r.phi - example1.truth.phi_star_min, abs=1e-14)


def test_oracle_strategy_has_zero_regret(example1):
    tr = run_experiment(example1, OracleStrategy(example1.truth.u_star), 10)
    np.testing.assert_allclose(tr.regret, 0.0, atol=1e-15)
    assert tr.records[0].contained is None


def test_noise_is_seeded(example1):
    a = run_experiment(example1, make_strategy("lcb_structured", example1), 3, noise_sigma=0.1, seed=4)
    b = run_experiment(example1, make_strategy("lcb_structured", example1), 3, noise_sigma=0.1, seed=4)
    np.testing.assert_array_equal([r.y for r in a.records], [r.y for r in b.records])
    noisy = [r.y - example1.truth.f_star(r.u) for r in a.records]
    assert np.all(np.abs(noisy) > 0)


def test_cost_observations_are_scalar(example1):
    tr = run_experiment(example1, make_strategy("lcb_agnostic", example1), 3)
    assert tr.obs_dim == 1
    for r in tr.records:
        assert r.y[0] == r.phi


def test_invalid_horizon(example1):
    with pytest.raises(ValueError):
        run_experiment(example1, OracleStrategy(example1.truth.u_star), 0)


def test_csv_round_trip(tmp_path, example1):
    tr = run_experiment(example1, make_strategy("lcb_structured", example1, sigma_v=1e-6), 4, seed=2)
    path = export_trace(tr, tmp_path / "t.csv")
    back = read_trace(path, "lcb_structured", 2)
    assert (back.input_dim, back.obs_dim, len(back)) == (1, 2, 4)
    for a, b in zip(tr.records, back.records):
        np.testing.assert_array_equal(a.u, b.u)
        np.testing.assert_array_equal(a.y, b.y)
        assert (a.phi, a.regret, a.cum_regret, a.gamma, a.q_value, a.contained) == (
            b.phi, b.regret, b.cum_regret, b.gamma, b.q_value, b.contained)
    assert export_trace(back, tmp_path / "u.csv").read_bytes() == path.read_bytes()


def test_csv_header_and_empty_trace(tmp_path, example1):
    assert trace_header(2, 1) == ["n", "u1", "u2", "y1", "phi", "regret", "cum_regret", "gamma", "q_value",
                                  "contained"]
    tr = run_experiment(example1, OracleStrategy(example1.truth.u_star), 1)
    tr.records.clear()
    path = export_trace(tr, tmp_path / "empty.csv")
    assert path.read_text().count("\n") == 1
    assert len(read_trace(path)) == 0


def test_csv_rejects_bad_files(tmp_path):
    (tmp_path / "a.csv").write_text("")
    (tmp_path / "b.csv").write_text("n,x\n1,2\n")
    for name in ("a.csv", "b.csv"):
        with pytest.raises(ValueError):
            read_trace(tmp_path / name)


def test_zoo_plateau_in_harness(ilc):
    tr = run_experiment(ilc, make_strategy("zoo_ilc", ilc), 40)
    assert tr.regret[-1] == pytest.approx(1.39204, abs=1e-5)
    assert np.all(tr.regret[19:] > 1e-3 * tr.regret[0])


def _lcb_bandit(seed=0, d=2):
    problem = linear_bandit_problem(seed, d)
    noise = NoiseModel.isotropic(1.0, 1)
    theta_bar = 2.0 * float(np.linalg.norm(problem.truth.theta_star))
    sch = GammaSchedule("data_dependent", 0.1, theta_bar, 1.0, d, 1, problem.a_bar)
    strat = LcbStrategy(problem.model, problem.loss, problem.domain, noise, sch, 1.0, seed, 4,
                        kind="lcb_structured", true_parameters=problem.truth.theta_star)
    return problem, strat, sch, noise


def test_optimism_under_containment():
    problem, strat, _, _ = _lcb_bandit()
    tr = run_experiment(problem, strat, 40, noise_sigma=1.0)
    checked = [r for r in tr.records if r.contained]
    assert len(checked) == 40
    for r in checked:
        assert r.q_value <= problem.truth.phi_star_min + 1e-9


def test_regret_bound_on_short_run():
    problem, strat, sch, noise = _lcb_bandit(seed=1, d=3)
    tr = run_experiment(problem, strat, 30, noise_sigma=1.0, seed=1)
    rep = verify_regret_bound(tr, BoundContext.from_problem(problem, sch, noise))
    assert rep.passed and rep.checked_prefixes == 30 and 0 < rep.max_ratio < 1


def test_bound_on_zero_regret_trace(example1):
    tr = run_experiment(example1, OracleStrategy(example1.truth.u_star), 5)
    for r in tr.records:
        r.contained, r.gamma, r.gamma_after = True, 1.0, 1.0
        r.z_sol, r.width_log_sum = r.f_star, 0.0
    ctx = BoundContext(1.0, 1.0, 2.0, 1.0, 4, 2, example1.lipschitz_z, example1.regret_scale)
    rep = verify_regret_bound(tr, ctx)
    assert rep.passed and rep.checked_prefixes == 5 and rep.max_ratio == 0.0


def test_bound_stops_at_first_exit(example1):
    tr = run_experiment(example1, OracleStrategy(example1.truth.u_star), 5)
    for r in tr.records:
        r.contained, r.gamma, r.gamma_after, r.z_sol, r.width_log_sum = True, 1.0, 1.0, r.f_star, 0.0
    tr.records[2].contained = False
    ctx = BoundContext(1.0, 1.0, 2.0, 1.0, 4, 2, 1.0, 1.0)
    assert verify_regret_bound(tr, ctx).checked_prefixes == 2


def test_bound_detects_violation(example1):
    tr = run_experiment(example1, OracleStrategy([1.0]), 3)
    for r in tr.records:
        r.contained, r.gamma, r.gamma_after, r.width_log_sum = True, 1.0, 1.0, 0.0
        r.z_sol = r.f_star
    rep = verify_regret_bound(tr, BoundContext(1.0, 1.0, 0.0, 1.0, 4, 2, 1.0, 1.0))
    assert not rep.passed and rep.theorem_violations == [1, 2, 3]
    assert rep.to_dict()["passed"] is False


def test_bound_context_constants():
    ctx = BoundContext(1.0, 2.0, 3.0, 1.0, 2, 1, 0.25, 4.0)
    assert ctx.c1 == pytest.approx(np.sqrt(8) * 0.25 * 4.0)
    assert ctx.squared_regret_coef == 2.0
    assert BoundContext(1, 1, 1, 1, 1, 1, 2.0, 1).squared_regret_coef == pytest.approx(32.0)
    assert ctx.log_term(10) == pytest.approx(2 * np.log1p(10 * 9 * 4 / 2))
    with pytest.raises(ValueError):
        BoundContext(-1, 1, 1, 1, 1, 1, 1, 1)
    with pytest.raises(ValueError):
        BoundContext(1, 1, 1, 1, 1, 1, 1, 0.5)
    assert RegretBoundReport(0).passed
