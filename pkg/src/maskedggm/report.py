"""Figure rendering for simulation reports.

Renders summary figures next to the delimited metric tables the simulate
command writes.  Matplotlib is imported lazily with the Agg backend so the
core library never needs a display.
"""

from __future__ import annotations

import math
from typing import Sequence


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def save_rate_curve(points: Sequence[dict], path, xlabel: str, title: str) -> None:
    """Rejection-rate curve with 95% error bars, one point per setting.

    ``points`` carry x, rejection_rate and rate_se keys.
    """
    plt = _pyplot()
    xs = [pt["x"] for pt in points]
    ys = [pt["rejection_rate"] for pt in points]
    errs = [1.96 * pt["rate_se"] if not math.isnan(pt["rate_se"]) else 0.0 for pt in points]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.errorbar(xs, ys, yerr=errs, marker="o", capsize=3)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("rejection rate")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_metric_bars(aggregate: dict, path, title: str) -> None:
    """Bar chart of mean selection metrics with one-sd whiskers."""
    plt = _pyplot()
    keys = [k for k in ("TPR", "TNR", "TDR", "F1", "FDP") if f"mean_{k}" in aggregate]
    means = [aggregate[f"mean_{k}"] for k in keys]
    sds = [aggregate.get(f"sd_{k}", 0.0) for k in keys]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.bar(range(len(keys)), means, yerr=sds, capsize=4, color="#4878d0")
    ax.set_xticks(range(len(keys)), keys)
    ax.set_ylim(0, 1.05)
    ax.grid(True, axis="y", alpha=0.3)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
