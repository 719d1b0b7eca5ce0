"""Figures for a run comparison, written to files (Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from hemsim.metrics import RunLedger  # noqa: E402


def _hours(ledger: RunLedger) -> np.ndarray:
    t = ledger.col("time_s")
    return (t - t[0]) / 3600.0


def plot_run(ledgers: dict, out_dir) -> list:
    """Temperature, storage SOC and grid power for each controller; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    fig, axes = plt.subplots(3, 1, figsize=(10, 8), sharex=True)
    for name, L in ledgers.items():
        h = _hours(L)
        axes[0].plot(h, L.col("indoor"), lw=0.9, label=name)
        axes[1].plot(h, L.col("soc_es"), lw=0.9, label=name)
        axes[2].plot(h, L.col("p_grid") / 1000.0, lw=0.7, label=name)
    any_l = next(iter(ledgers.values()))
    h = _hours(any_l)
    t_set = any_l.col("t_set")
    axes[0].fill_between(h, t_set - 1, t_set + 1, color="0.85", step="post", label="band")
    axes[0].set_ylabel("indoor [degC]")
    axes[1].set_ylabel("storage SOC [-]")
    axes[2].set_ylabel("grid [kW]")
    axes[2].set_xlabel("time [h]")
    for ax in axes:
        ax.legend(loc="upper right", fontsize=8)
        ax.grid(alpha=0.3)
    fig.tight_layout()
    p = out / "timeseries.png"
    fig.savefig(p, dpi=110)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(6, 4))
    names = list(ledgers)
    direct, stored, curt = [], [], []
    for L in ledgers.values():
        used = L.col("p_solar").sum()
        st = L.col("p_solar_stored").sum()
        cu = L.col("p_curtailed").sum()
        gen = max(used + cu, 1e-12)
        direct.append(100 * (used - st) / gen)
        stored.append(100 * st / gen)
        curt.append(100 * cu / gen)
    x = np.arange(len(names))
    ax.bar(x, direct, label="direct")
    ax.bar(x, stored, bottom=direct, label="stored")
    ax.bar(x, curt, bottom=np.add(direct, stored), label="curtailed")
    ax.set_xticks(x, names)
    ax.set_ylabel("share of solar generation [%]")
    ax.legend(fontsize=8)
    fig.tight_layout()
    p = out / "solar_split.png"
    fig.savefig(p, dpi=110)
    plt.close(fig)
    paths.append(p)
    return paths
