import json

import pytest

from greybox_lcb import cli
from greybox_lcb.verification import CheckResult

EXAMPLE1 = """\
[experiment]
problem = example1
iterations = 3

[strategy:lcb]
kind = lcb_structured
sigma_v = 1e-6

[strategy:ts]
kind = ts_structured
sigma_v = 1e-6
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "e1.cfg"
    path.write_text(EXAMPLE1)
    return path


def test_run_writes_outputs(tmp_path, cfg_file, capsys):
    out = tmp_path / "res"
    assert cli.main(["run", str(cfg_file), "--out", str(out), "--reps", "2"]) == 0
    names = sorted(p.name for p in (out / "traces").iterdir())
    assert names == ["lcb_seed0.csv", "ts_seed0.csv", "ts_seed1.csv"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["strategies"]["ts"]["runs"] == 2 and summary["failures"] == {}
    assert {p.name for p in (out / "plots").iterdir()} == {"instantaneous.svg", "cumulative.svg", "trajectory.svg"}
    assert "lcb" in json.loads(capsys.readouterr().out)["strategies"]


def test_run_is_deterministic(tmp_path, cfg_file):
    for d in ("a", "b"):
        assert cli.main(["run", str(cfg_file), "--out", str(tmp_path / d), "--seed", "3"]) == 0
    for name in ("lcb_seed3.csv", "ts_seed3.csv"):
        assert (tmp_path / "a/traces" / name).read_bytes() == (tmp_path / "b/traces" / name).read_bytes()
    for name in ("instantaneous.svg", "cumulative.svg"):
        assert (tmp_path / "a/plots" / name).read_bytes() == (tmp_path / "b/plots" / name).read_bytes()


def test_run_bundled_config_by_name(tmp_path):
    assert cli.main(["run", "example1.cfg", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "traces/lcb_structured_seed0.csv").exists()


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["run"],
    ["run", "/no/such/file.cfg"],
    ["run", "example1.cfg", "--jobs", "0"],
    ["run", "example1.cfg", "--seed", "-1"],
    ["verify", "everything"],
    ["verify", "coverage", "--delta", "0"],
    ["plot", "/no/such/*.csv", "--kind", "cumulative"],
    ["plot", "x.csv"],
    ["plot", "x.csv", "--kind", "pie"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert cli.main(argv) == 2


def test_bad_config_exit_2(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text(EXAMPLE1 + "bogus = 1\n")
    assert cli.main(["run", str(path)]) == 2
    assert f"{path}:12" in capsys.readouterr().err


def test_failed_run_exit_1(tmp_path, cfg_file, monkeypatch, capsys):
    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(cli, "run_experiment", boom)
    assert cli.main(["run", str(cfg_file), "--out", str(tmp_path)]) == 1
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert "solver exploded" in summary["failures"]["lcb"][0]["error"]


def test_verify_lemmas(tmp_path, capsys):
    assert cli.main(["verify", "lemmas", "--reps", "20", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "verify_lemmas.json").read_text())
    assert report["passed"] and len(report["checks"]) == 5


def test_verify_failure_exit_1(monkeypatch, capsys):
    from greybox_lcb import verification

    monkeypatch.setattr(verification, "run_lemma_suite", lambda seed, n: [CheckResult("det", n, 1, 1.0, 1e-10)])
    assert cli.main(["verify", "lemmas"]) == 1
    assert json.loads(capsys.readouterr().out)["passed"] is False


def test_verify_coverage(capsys):
    assert cli.main(["verify", "coverage", "--delta", "0.5", "--reps", "100"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["runs"] == 100 and report["fraction"] <= 0.5


def test_verify_regret_bound_small(capsys):
    assert cli.main(["verify", "regret_bound", "--reps", "1", "--seed", "4"]) == 0
    assert json.loads(capsys.readouterr().out)["instances"][0]["seed"] == 4


def test_plot_from_traces(tmp_path, cfg_file, capsys):
    out = tmp_path / "res"
    assert cli.main(["run", str(cfg_file), "--out", str(out)]) == 0
    pattern = str(out / "traces" / "*.csv")
    assert cli.main(["plot", pattern, "--kind", "cumulative", "--out", str(tmp_path / "c.svg")]) == 0
    assert (tmp_path / "c.svg").read_text().lstrip().startswith("<?xml")
    assert cli.main(["plot", str(out / "traces/lcb_seed0.csv"), "--kind", "trajectory", "--problem", "example1",
                     "--out", str(tmp_path / "figs")]) == 0
    assert (tmp_path / "figs/trajectory.svg").exists()
    assert cli.main(["plot", pattern, "--kind", "trajectory", "--problem", "nowhere"]) == 2


def test_plot_rejects_malformed_trace(tmp_path, capsys):
    (tmp_path / "junk_seed0.csv").write_text("a,b\n1,2\n")
    assert cli.main(["plot", str(tmp_path / "*.csv"), "--kind", "instantaneous"]) == 2
