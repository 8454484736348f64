"""Report figures written next to the TSV outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import MetricResult  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_loss_trace(step_losses: Sequence[float], path, initial: float | None = None,
                    final: float | None = None, window: int = 10) -> Path:
    """Per-batch training loss with a moving average overlay."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 3))
        steps = np.arange(1, len(step_losses) + 1)
        ax.plot(steps, step_losses, lw=0.8, alpha=0.5, label="batch loss")
        if len(step_losses) >= window:
            smooth = np.convolve(step_losses, np.ones(window) / window, mode="valid")
            ax.plot(steps[window - 1:], smooth, lw=1.5, label=f"mean of {window}")
        if initial is not None:
            ax.axhline(initial, color="grey", ls="--", lw=0.8, label="initial mean")
        if final is not None:
            ax.axhline(final, color="black", ls=":", lw=0.8, label="final mean")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_metrics(results: Sequence[MetricResult], path, title: str | None = None) -> Path:
    """Mean of each metric with standard-error bars, per-query values as dots."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(1.0 + 0.9 * len(results), 3))
        x = np.arange(len(results))
        means = [r.mean for r in results]
        errs = [r.stderr for r in results]
        ax.bar(x, means, yerr=errs, capsize=3, color="0.8", edgecolor="0.3")
        rng = np.random.default_rng(0)
        for i, r in enumerate(results):
            vals = np.fromiter(r.per_query.values(), float)
            ax.scatter(i + rng.uniform(-0.25, 0.25, vals.size), vals, s=4, alpha=0.4, color="C0")
        ax.set_xticks(x, [r.name for r in results], rotation=30, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("value")
        if title:
            ax.set_title(title)
        return _save(fig, path)
