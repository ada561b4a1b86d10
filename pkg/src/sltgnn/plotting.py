"""Accuracy-versus-sparsity plots from sweep CSVs."""

from __future__ import annotations

from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import InputError  # noqa: E402
from .sweep import read_rows  # noqa: E402

__all__ = ["emit_plot", "summarize"]


def _series_label(row) -> str:
    if row["method"] == "S-Sup":
        return "S-Sup"
    return f"M-Sup N={row['N']} ({row['threshold_mode']})"


def summarize(rows) -> dict[str, list[tuple[float, float, float, int]]]:
    """Per series: (sparsity, mean test accuracy, std, runs), successful runs only."""
    groups = defaultdict(lambda: defaultdict(list))
    for row in rows:
        if row["status"] != "ok":
            continue
        groups[_series_label(row)][float(row["sparsity"])].append(float(row["acc_test"]))
    return {
        label: [(k, float(np.mean(v)), float(np.std(v)), len(v)) for k, v in sorted(points.items())]
        for label, points in groups.items()
    }


def emit_plot(csv_path, out_path) -> list[str]:
    """Render one line per method with std bands; returns the legend labels."""
    try:
        rows = read_rows(csv_path)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    series = summarize(rows)
    if not series:
        raise InputError(f"{csv_path}: no successful runs to plot")
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, points in series.items():
        k, mean, std, _ = (np.array(c) for c in zip(*points))
        ax.plot(100 * k, 100 * mean, marker="o", label=label)
        ax.fill_between(100 * k, 100 * (mean - std), 100 * (mean + std), alpha=0.2)
    ax.set_xlabel("sparsity (%)")
    ax.set_ylabel("test accuracy (%)")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    # fixed metadata keeps the output byte-stable across runs
    fig.savefig(out_path, metadata={"Software": None})
    plt.close(fig)
    return list(series)
