"""Report figures: AUROC with bootstrap intervals per model, and threshold sweeps.

Rendered with the Agg backend straight to PNG; nothing here opens a window.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
}

METRICS = ("coverage", "sensitivity", "specificity", "ppv", "npv", "accuracy")
LABELS = {"coverage": "Coverage", "sensitivity": "Sensitivity", "specificity": "Specificity",
          "ppv": "PPV", "npv": "NPV", "accuracy": "Accuracy"}
# fixed metadata keeps the PNG bytes stable between runs
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=_PNG_META, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_auroc(rows: Sequence[dict], path) -> Path:
    """Horizontal AUROC bars with CI whiskers.

    ``rows``: dicts with ``model``, ``auroc``, ``ci_low``, ``ci_high``.
    """
    rows = [r for r in rows if r.get("auroc") is not None]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 0.45 * max(len(rows), 1) + 0.8))
        names = [r["model"] for r in rows]
        vals = [r["auroc"] for r in rows]
        lo = [r["auroc"] - r["ci_low"] for r in rows]
        hi = [r["ci_high"] - r["auroc"] for r in rows]
        y = range(len(rows))
        ax.barh(list(y), vals, xerr=[lo, hi], color="0.75", edgecolor="0.3", capsize=3)
        for yi, v, r in zip(y, vals, rows):
            ax.text(max(v, r["ci_high"]) + 0.01, yi, f"{v:.3f}", va="center", fontsize=7)
        ax.set_yticks(list(y))
        ax.set_yticklabels(names)
        ax.invert_yaxis()
        ax.set_xlim(0.4, 1.05)
        ax.axvline(0.5, color="0.5", lw=0.6, ls=":")
        ax.set_xlabel("AUROC (95% bootstrap CI)")
        return _save(fig, path)


def plot_thresholds(series: dict[str, Sequence[dict]], path) -> Path:
    """One panel per diagnostic metric, one line per model, alpha on the x axis.

    ``series`` maps model name to threshold rows (dicts with ``alpha`` and the
    metric keys); undefined values are left as gaps.
    """
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, 3, figsize=(9.0, 5.0), sharex=True)
        for ax, metric in zip(axes.flat, METRICS):
            for name, rows in series.items():
                xs = [r["alpha"] for r in rows]
                ys = [float("nan") if r.get(metric) is None else r[metric] for r in rows]
                ax.plot(xs, ys, marker="o", ms=3, lw=1, label=name)
            ax.set_title(LABELS[metric])
            ax.set_ylim(-0.02, 1.02)
            ax.grid(alpha=0.3, lw=0.5)
        for ax in axes[1]:
            ax.set_xlabel("alpha")
        axes[0, 0].legend(loc="lower right", frameon=False)
        fig.tight_layout()
        return _save(fig, path)
