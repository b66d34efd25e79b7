"""Static regret and trajectory figures (SVG or PNG via matplotlib's Agg backend)."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PLOT_KINDS = ("instantaneous", "cumulative", "trajectory")
# regret values at or below this are drawn at the floor of the log axis
REGRET_FLOOR = 1e-16

_RC = {"svg.hashsalt": "greybox-lcb", "svg.fonttype": "path", "figure.dpi": 100, "font.size": 9}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"Date": None} if path.suffix == ".svg" else {}
    fig.savefig(path, metadata=meta)
    plt.close(fig)
    return path


def group_traces(traces) -> dict:
    """Group traces by strategy label, each group sorted by seed."""
    groups = defaultdict(list)
    for tr in traces:
        groups[tr.strategy].append(tr)
    return {k: sorted(v, key=lambda t: t.seed) for k, v in sorted(groups.items())}


def envelope(series: Sequence[np.ndarray]):
    """Pointwise min, median and max over equally long series (truncated to the shortest)."""
    n = min(len(s) for s in series)
    arr = np.array([np.asarray(s)[:n] for s in series])
    return arr.min(axis=0), np.median(arr, axis=0), arr.max(axis=0)


def plot_regret(traces, path, kind: str = "instantaneous", title: Optional[str] = None) -> Path:
    """Log-scale regret per strategy; repeated runs show median plus min/max lines."""
    if kind not in ("instantaneous", "cumulative"):
        raise ValueError(f"unknown regret plot kind {kind!r}")
    groups = group_traces(traces)
    if not groups:
        raise ValueError("no traces to plot")
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        for i, (label, trs) in enumerate(groups.items()):
            color = f"C{i % 10}"
            series = [np.maximum(t.regret if kind == "instantaneous" else t.cum_regret, REGRET_FLOOR) for t in trs]
            lo, med, hi = envelope(series)
            n = np.arange(1, med.size + 1)
            name = label if len(trs) == 1 else f"{label} (median of {len(trs)})"
            ax.plot(n, med, color=color, lw=1.5, label=name)
            if len(trs) > 1:
                ax.plot(n, lo, color=color, lw=0.8, ls="--")
                ax.plot(n, hi, color=color, lw=0.8, ls="--")
        ax.set_yscale("log")
        ax.set_xlabel("iteration n")
        ax.set_ylabel("instantaneous regret r_n" if kind == "instantaneous" else "cumulative regret R_n")
        if title:
            ax.set_title(title)
        ax.grid(True, which="major", alpha=0.3)
        ax.legend(fontsize=7)
        fig.tight_layout()
        return _save(fig, Path(path))


def plot_trajectories(traces, path, u_star=None, z_star=None, output_map=None, title: Optional[str] = None) -> Path:
    """Final input and output of each strategy against the optimum.

    For a group of repeated runs the run with median final regret is shown.
    Outputs come from ``output_map(u)`` when given (e.g. the true plant);
    otherwise only traces that observe the full output vector are drawn.
    """
    groups = group_traces(traces)
    if not groups:
        raise ValueError("no traces to plot")
    finals = {}
    for label, trs in groups.items():
        order = np.argsort([t.regret[-1] for t in trs], kind="stable")
        finals[label] = trs[order[(len(trs) - 1) // 2]]
    show_out = z_star is not None or output_map is not None or any(t.obs_dim > 1 for t in finals.values())
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, 2 if show_out else 1, figsize=(9.0 if show_out else 5.0, 3.6), squeeze=False)
        ax_u = axes[0, 0]
        for i, (label, tr) in enumerate(finals.items()):
            u = tr.records[-1].u
            ax_u.step(np.arange(1, u.size + 1), u, where="mid", color=f"C{(i + 1) % 10}", label=label,
                      marker="o" if u.size == 1 else None)
        if u_star is not None:
            us = np.atleast_1d(u_star)
            ax_u.step(np.arange(1, us.size + 1), us, where="mid", color="k", lw=2, ls=":", label="optimum",
                      marker="x" if us.size == 1 else None)
        ax_u.set_xlabel("input index")
        ax_u.set_ylabel("final input u_N")
        ax_u.legend(fontsize=7)
        if show_out:
            ax_z = axes[0, 1]
            for i, (label, tr) in enumerate(finals.items()):
                if output_map is not None or tr.obs_dim > 1:
                    y = np.atleast_1d(output_map(tr.records[-1].u) if output_map is not None else tr.records[-1].y)
                    ax_z.plot(np.arange(1, y.size + 1), y, color=f"C{(i + 1) % 10}", label=label, marker=".")
            if z_star is not None:
                zs = np.atleast_1d(z_star)
                ax_z.plot(np.arange(1, zs.size + 1), zs, color="k", lw=2, ls=":", label="optimum")
            ax_z.set_xlabel("output index")
            ax_z.set_ylabel("final output")
            ax_z.legend(fontsize=7)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        return _save(fig, Path(path))


def render(traces, kind: str, path, **kw) -> Path:
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; choose from {PLOT_KINDS}")
    if kind == "trajectory":
        return plot_trajectories(traces, path, **kw)
    return plot_regret(traces, path, kind, kw.get("title"))
