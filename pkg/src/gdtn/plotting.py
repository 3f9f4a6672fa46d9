"""Figures written next to the CSV outputs (PNG, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.figsize": (6.0, 3.4),
    "savefig.dpi": 120,
    "svg.hashsalt": "gdtn",
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_latency(report, path: str | Path) -> Path:
    """End-to-end latency over time, one marker style per path version."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if report.series:
            first = min(d.vlan for d in report.series)
            for label, pick in (("flow 1 (initial path)", True), ("flow 2 (after reconfiguration)", False)):
                pts = [d for d in report.series if (d.vlan == first) == pick]
                if pts:
                    ax.plot(
                        [d.rx_ns / 1e6 for d in pts],
                        [d.latency_ns / 1e3 for d in pts],
                        ".", ms=3, label=label,
                    )
        if report.failure_ns is not None:
            ax.axvline(report.failure_ns / 1e6, color="k", ls="--", lw=0.8, label="link failure")
        ax.set_xlabel("time [ms]")
        ax.set_ylabel("latency [µs]")
        title = "Latency before and after reconfiguration"
        if report.downtime_ns:
            title += f" (downtime {report.downtime_ns / 1e6:.1f} ms)"
        ax.set_title(title)
        ax.legend(loc="best")
        return _save(fig, path)


def plot_comparison(comparison, path: str | Path, held_out=()) -> Path:
    """Mean and p99 response time per load, real vs twin."""
    rows = comparison.rows
    loads = np.array([r.load for r in rows])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(loads, [r.mean_real for r in rows], "o-", label="mean (real)")
        ax.plot(loads, [r.mean_twin for r in rows], "s--", label="mean (twin)")
        ax.plot(loads, [r.p99_real for r in rows], "o-", label="p99 (real)")
        ax.plot(loads, [r.p99_twin for r in rows], "s--", label="p99 (twin)")
        for h in held_out:
            ax.axvline(h, color="grey", ls=":", lw=0.8)
        ax.set_xlabel("load [req/s]")
        ax.set_ylabel("response time [ms]")
        ax.set_title("Real system vs. twin")
        ax.legend(loc="upper left")
        return _save(fig, path)


def plot_makespan(samples: np.ndarray, path: str | Path, deadline: float | None = None) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.hist(samples, bins=60, density=True, color="C0", alpha=0.8)
        if deadline is not None:
            ax.axvline(deadline, color="C3", ls="--", label=f"deadline {deadline:g} s")
            ax.legend(loc="best")
        ax.set_xlabel("completion time [s]")
        ax.set_ylabel("density")
        ax.set_title("Makespan distribution")
        return _save(fig, path)
