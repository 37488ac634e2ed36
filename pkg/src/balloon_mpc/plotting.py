"""Report figures written to files (Agg backend, no display needed)."""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _finite_or_zero(v):
    return v if v is not None and math.isfinite(v) else 0.0


def plot_trajectory(rows, path, radius_km: float = 50.0, e_max: float | None = None,
                    title: str | None = None) -> None:
    """Ground track with the station circle, plus pressure and battery over time."""
    x = np.array([r["x"] for r in rows]) / 1000.0
    y = np.array([r["y"] for r in rows]) / 1000.0
    t = (np.array([r["t"] for r in rows]) - rows[0]["t"]) / 3600.0
    l = np.array([r["l"] for r in rows])
    E = np.array([r["E"] for r in rows])
    frac = E / (e_max if e_max else max(E.max(), 1e-12))
    inside = np.array([r["inside"] for r in rows], dtype=bool)

    fig = plt.figure(figsize=(11, 4.5))
    ax = fig.add_subplot(1, 2, 1)
    ang = np.linspace(0, 2 * math.pi, 200)
    ax.plot(radius_km * np.cos(ang), radius_km * np.sin(ang), "k--", lw=1, label=f"{radius_km:g} km")
    ax.plot(x, y, lw=1, color="tab:blue")
    ax.scatter(x[0], y[0], color="tab:green", zorder=3, label="start")
    ax.scatter(x[-1], y[-1], color="tab:red", zorder=3, label="end")
    ax.plot(0, 0, "k+")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("east [km]")
    ax.set_ylabel("north [km]")
    ax.legend(loc="best", fontsize=8)
    ax.set_title(title or f"TWR {inside.mean():.2f}")

    ax1 = fig.add_subplot(1, 2, 2)
    ax1.plot(t, l, color="tab:blue")
    ax1.invert_yaxis()
    ax1.set_xlabel("time [h]")
    ax1.set_ylabel("pressure [Pa]", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(t, frac, color="tab:orange")
    ax2.set_ylim(0, 1.05)
    ax2.set_ylabel("battery (relative)", color="tab:orange")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_benchmark(summary, path, metric: str = "twr") -> None:
    tags = list(summary.agents)
    means = [summary.agents[a][metric]["mean"] for a in tags]
    cis = [_finite_or_zero(summary.agents[a][metric]["ci"]) for a in tags]
    fig, ax = plt.subplots(figsize=(max(4, 1.3 * len(tags) + 2), 4))
    ax.bar(range(len(tags)), means, yerr=cis, capsize=4, color="tab:blue", alpha=0.8)
    ax.set_xticks(range(len(tags)))
    ax.set_xticklabels(tags, rotation=20, ha="right")
    ax.set_ylabel(metric)
    ax.set_title(f"{metric} (mean, 95% CI), n={len(summary.seeds)} seeds")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_ablation(summary, path, title: str = "") -> None:
    """Quality against decision time, one point per ablation value."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for tag, stats in summary.agents.items():
        tw, ci = stats["twr"]["mean"], _finite_or_zero(stats["twr"]["ci"])
        st, sci = stats["mean_step_time"]["mean"], _finite_or_zero(stats["mean_step_time"]["ci"])
        ax.errorbar(st, tw, xerr=sci, yerr=ci, fmt="o", capsize=3)
        ax.annotate(tag.split("=", 1)[-1].rstrip("]"), (st, tw), textcoords="offset points",
                    xytext=(5, 5), fontsize=8)
    ax.set_xlabel("mean decision time per step [s]")
    ax.set_ylabel("TWR")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
