"""Command-line front end: ``run``, ``verify`` and ``plot``.

Exit codes: 0 success, 1 a property check or run failed, 2 usage error.
"""
from __future__ import annotations

import argparse
import glob
import json
import logging
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ConfigError, ExperimentConfig, StrategyConfig, load_config
from .harness import RegretTrace, export_trace, read_trace, run_experiment
from .plotting import PLOT_KINDS, render
from .strategies import make_strategy

log = logging.getLogger("greybox_lcb")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
SUITES = ("lemmas", "coverage", "regret_bound")
_TRACE_NAME = re.compile(r"^(?P<label>.+)_seed(?P<seed>\d+)$")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

_PROBLEM_CACHE: dict = {}


def _problem(cfg: ExperimentConfig):
    key = (cfg.problem, cfg.custom_problem)
    if key not in _PROBLEM_CACHE:
        _PROBLEM_CACHE[key] = cfg.build_problem()
    return _PROBLEM_CACHE[key]


def run_single(cfg: ExperimentConfig, strat: StrategyConfig, seed: int) -> RegretTrace:
    """One (strategy, seed) run; a pure function of its arguments."""
    problem = _problem(cfg)
    strategy = make_strategy(strat.kind, problem, gamma=strat.gamma, gamma_value=strat.gamma_value,
                             delta=strat.delta, theta_bar=strat.theta_bar, sigma0=strat.sigma0,
                             sigma_v=strat.sigma_v, starts=strat.starts, grid_points=strat.grid_points,
                             seed=seed, alpha=strat.alpha, ts_starts=strat.ts_starts)
    return run_experiment(problem, strategy, cfg.iterations, cfg.noise_sigma, seed, name=strat.name)


def _run_task(args):
    cfg, strat, seed = args
    try:
        return run_single(cfg, strat, seed), None
    except Exception as exc:  # reported per strategy; the batch continues
        return None, f"{type(exc).__name__}: {exc}"


def run_tasks(cfg: ExperimentConfig) -> list:
    return [(cfg, s, cfg.seed + r) for s in cfg.strategies for r in range(s.reps)]


def summarize(traces, kinds: Optional[dict] = None) -> dict:
    """Per-run final and cumulative regret plus median/min/max per strategy; uses trace data only."""
    runs, groups = [], {}
    for tr in sorted(traces, key=lambda t: (t.strategy, t.seed)):
        runs.append({"strategy": tr.strategy, "seed": tr.seed, "final_regret": float(tr.regret[-1]),
                     "cum_regret": float(tr.cum_regret[-1]), "iterations": len(tr)})
        groups.setdefault(tr.strategy, []).append(tr)
    stats = {}
    for label, trs in groups.items():
        cum = np.array([t.cum_regret[-1] for t in trs])
        fin = np.array([t.regret[-1] for t in trs])
        stats[label] = {"runs": len(trs),
                        "cum_regret_median": float(np.median(cum)), "cum_regret_min": float(cum.min()),
                        "cum_regret_max": float(cum.max()), "final_regret_median": float(np.median(fin)),
                        "final_regret_min": float(fin.min()), "final_regret_max": float(fin.max())}
        if kinds and label in kinds:
            stats[label]["kind"] = kinds[label]
    return {"runs": runs, "strategies": stats}


def _pool_map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks))


def cmd_run(cfg: ExperimentConfig, jobs: int = 1) -> tuple[int, dict]:
    out = Path(cfg.output)
    problem = _problem(cfg)
    tasks = run_tasks(cfg)
    results = _pool_map(_run_task, tasks, jobs)
    traces, failures = [], {}
    trace_dir = out / "traces"
    for (_, strat, seed), (trace, err) in zip(tasks, results):
        if err is not None:
            failures.setdefault(strat.name, []).append({"seed": seed, "error": err})
            log.error("%s seed %d failed: %s", strat.name, seed, err)
            continue
        traces.append(trace)
        export_trace(trace, trace_dir / f"{strat.name}_seed{seed}.csv")
    summary = {"problem": problem.name, "iterations": cfg.iterations, "seed": cfg.seed,
               "phi_star_min": float(problem.truth.phi_star_min),
               **summarize(traces, {s.name: s.kind for s in cfg.strategies}), "failures": failures}
    for run in summary["runs"]:
        run["trace"] = f"traces/{run['strategy']}_seed{run['seed']}.csv"
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfg.to_text())
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if traces:
        plots = out / "plots"
        render(traces, "instantaneous", plots / "instantaneous.svg", title=problem.name)
        render(traces, "cumulative", plots / "cumulative.svg", title=problem.name)
        render(traces, "trajectory", plots / "trajectory.svg", u_star=problem.truth.u_star,
               z_star=problem.truth.f_star(problem.truth.u_star), output_map=problem.truth.f_star,
               title=problem.name)
    return (EXIT_FAILURE if failures else EXIT_OK), summary


def resolve_config_path(name: str) -> Path:
    """A filesystem path, or the name of a bundled config (``example1.cfg``, ``ilc.cfg``)."""
    path = Path(name)
    if path.exists():
        return path
    bundled = resources.files("greybox_lcb") / "configs" / path.name
    if bundled.is_file():
        return Path(str(bundled))
    raise UsageError(f"config file not found: {name}")


def bundled_configs() -> list[str]:
    return sorted(p.name for p in (resources.files("greybox_lcb") / "configs").iterdir() if p.name.endswith(".cfg"))


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def _regret_task(args):
    from .verification import regret_bound_instance

    seed, N = args
    trace, rep = regret_bound_instance(seed, N)
    return seed, rep.to_dict()


def cmd_verify(suite: str, seed: int = 0, runs: Optional[int] = None, delta: float = 0.1,
               jobs: int = 1) -> tuple[int, dict]:
    from . import verification as V
    from .model import GammaSchedule

    if suite == "lemmas":
        checks = [c.to_dict() for c in V.run_lemma_suite(seed, runs or 1000)]
        report = {"suite": suite, "seed": seed, "checks": checks, "passed": all(c["passed"] for c in checks)}
    elif suite == "coverage":
        if not 0 < delta <= 1:
            raise UsageError("delta must lie in (0, 1]")
        problem = V.coverage_problem(seed, 2)
        theta_bar = 2.0 * float(np.linalg.norm(problem.truth.theta_star))
        schedule = GammaSchedule("data_dependent", delta, theta_bar, 1.0, 2, 1, problem.a_bar)
        res = V.verify_simultaneous_containment(problem, schedule, runs or 500, 50, 1.0, seed)
        report = {"suite": suite, "seed": seed, "N": 50, "theta_bar": theta_bar, **res.to_dict()}
    elif suite == "regret_bound":
        results = _pool_map(_regret_task, [(seed + i, 200) for i in range(runs or 50)], jobs)
        instances = [{"seed": s, **r} for s, r in results]
        report = {"suite": suite, "seed": seed, "N": 200, "instances": instances,
                  "violations": sum(len(r["theorem_violations"]) + len(r["corollary_violations"]) for r in instances),
                  "passed": all(r["passed"] for r in instances)}
    else:
        raise UsageError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    return (EXIT_OK if report["passed"] else EXIT_FAILURE), report


# ---------------------------------------------------------------------------
# plot
# ---------------------------------------------------------------------------


def load_traces(pattern: str) -> list[RegretTrace]:
    paths = sorted(glob.glob(pattern, recursive=True))
    paths = [p for p in paths if p.endswith(".csv")]
    if not paths:
        raise UsageError(f"no trace files match {pattern!r}")
    traces = []
    for p in paths:
        m = _TRACE_NAME.match(Path(p).stem)
        label, seed = (m.group("label"), int(m.group("seed"))) if m else (Path(p).stem, 0)
        try:
            traces.append(read_trace(p, label, seed))
        except (ValueError, OSError) as exc:
            raise UsageError(str(exc)) from None
    return traces


def cmd_plot(pattern: str, kind: str, out: Optional[str] = None, problem_name: Optional[str] = None) -> Path:
    traces = load_traces(pattern)
    if out is None:
        path = Path(f"{kind}.svg")
    else:
        path = Path(out)
        if path.suffix.lower() not in (".svg", ".png", ".pdf"):
            path = path / f"{kind}.svg"
    kw = {}
    if kind == "trajectory" and problem_name is not None:
        from .problems import get_problem

        try:
            truth = get_problem(problem_name).truth
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        kw = {"u_star": truth.u_star, "z_star": truth.f_star(truth.u_star), "output_map": truth.f_star}
    return render(traces, kind, path, **kw)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _nonneg_int(text):
    val = int(text)
    if val < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return val


def _pos_int(text):
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return val


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_nonneg_int, default=None, help="base random seed")
    common.add_argument("--reps", type=_pos_int, default=None,
                        help="repetitions (Thompson runs for 'run', instances or runs for 'verify')")
    common.add_argument("--jobs", type=_pos_int, default=1, help="worker processes")
    common.add_argument("--out", default=None, help="output directory (or file for 'plot')")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="greybox-lcb", description="LCB Bayesian optimization experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", parents=[common], help="run an experiment config")
    p.add_argument("config", help=f"config path or bundled name ({', '.join(bundled_configs())})")
    p = sub.add_parser("verify", parents=[common], help="run a property suite")
    p.add_argument("suite", choices=SUITES)
    p.add_argument("--delta", type=float, default=0.1, help="confidence parameter for 'coverage'")
    p = sub.add_parser("plot", parents=[common], help="plot trace CSV files")
    p.add_argument("pattern", help="glob matching trace CSV files")
    p.add_argument("--kind", choices=PLOT_KINDS, required=True)
    p.add_argument("--problem", default=None, help="benchmark name for the optimum overlay")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            cfg = load_config(resolve_config_path(args.config)).with_overrides(args.seed, args.reps, args.out)
            code, summary = cmd_run(cfg, args.jobs)
            print(json.dumps({k: summary[k] for k in ("problem", "strategies", "failures")}, indent=2, sort_keys=True))
            print(f"wrote {cfg.output}", file=sys.stderr)
            return code
        if args.command == "verify":
            code, report = cmd_verify(args.suite, args.seed or 0, args.reps, args.delta, args.jobs)
            text = json.dumps(report, indent=2, sort_keys=True)
            if args.out:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
                (out / f"verify_{args.suite}.json").write_text(text + "\n")
            print(text)
            return code
        path = cmd_plot(args.pattern, args.kind, args.out, args.problem)
        print(path)
        return EXIT_OK
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
