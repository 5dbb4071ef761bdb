"""Figure rendering for the CLI report paths.

Figures are written next to the delimited output; the simulation
library itself stays CSV-only so any plotting tool can be used instead.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .simlab import RaceResult, StorageScenarioResult


def plot_race_grid(results: Sequence[RaceResult], path: str | Path) -> Path:
    """One line per node count: estimated probability over segment length."""
    path = Path(path)
    by_n: dict[int, list[RaceResult]] = {}
    for r in results:
        by_n.setdefault(r.n, []).append(r)
    model = results[0].model if results else "race"
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for n in sorted(by_n):
        rows = sorted(by_n[n], key=lambda r: r.L)
        ax.plot(
            [r.L for r in rows],
            [r.estimate for r in rows],
            marker="o",
            label=f"{n} nodes",
        )
    ax.set_xlabel("cross-chain block segment length")
    ax.set_ylabel(f"estimated {model} probability")
    ax.set_yscale("log")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_storage_series(result: StorageScenarioResult, path: str | Path) -> Path:
    """Per-node stored bytes over time, shared vs non-shared topologies."""
    path = Path(path)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    for ax, topology in zip(axes, ("individual", "shared")):
        series: dict[str, list[tuple[int, int]]] = {}
        for s in result.samples:
            if s.topology == topology:
                series.setdefault(s.node_id, []).append((s.time_ms, s.stored_bytes))
        for node_id in sorted(series):
            points = sorted(series[node_id])
            ax.plot(
                [p[0] / 1000 for p in points],
                [p[1] / 1024 for p in points],
                marker=".",
                label=node_id,
            )
        ax.set_title(f"{topology} topology")
        ax.set_xlabel("time (s)")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
    axes[0].set_ylabel("stored producer data (KiB)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_validation_summary(report_dict: dict, path: str | Path) -> Path:
    """Bar chart of validation verdict counts from a run report."""
    path = Path(path)
    validation = report_dict.get("validation", {})
    labels = ("match", "mismatch", "inconclusive")
    counts = [validation.get(k, 0) for k in labels]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    bars = ax.bar(labels, counts, color=["#2a9d8f", "#e76f51", "#e9c46a"])
    ax.bar_label(bars)
    ax.set_ylabel("transactions")
    ax.set_title("cross-chain validation verdicts")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
