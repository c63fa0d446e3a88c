"""Figure rendering for the report paths.

Every reporting command writes a PNG next to its delimited output. Figures
are deliberately plain (Agg backend, fixed size, no timestamps) so repeated
runs produce bitwise-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIGSIZE = (6.0, 4.0)
DPI = 120


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_history_plot(history, path) -> None:
    fig, ax = plt.subplots(figsize=FIGSIZE)
    epochs = np.arange(1, len(history.loss) + 1)
    ax.plot(epochs, history.loss, color="tab:blue", label="training loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if history.val_metric is not None:
        ax2 = ax.twinx()
        ax2.plot(epochs, history.val_metric, color="tab:orange",
                 label=history.metric_name or "validation")
        ax2.set_ylabel(history.metric_name or "validation metric")
    ax.set_title("training history")
    _finish(fig, path)


def save_metric_plot(values, metric_name, path) -> None:
    values = np.asarray(values, dtype=float)
    fig, ax = plt.subplots(figsize=FIGSIZE)
    x = np.arange(1, values.size + 1)
    ax.plot(x, values, "o", color="tab:blue", label="per fold")
    ax.axhline(values.mean(), color="tab:red", linestyle="--",
               label=f"mean = {values.mean():.4f}")
    ax.set_xlabel("fold")
    ax.set_ylabel(metric_name)
    ax.set_title(f"{metric_name} over folds")
    ax.legend()
    _finish(fig, path)


def save_importance_plot(report, path, top: int = 20) -> None:
    order = report.order()[:top]
    fig, ax = plt.subplots(figsize=FIGSIZE)
    names = [report.feature_names[i] for i in order][::-1]
    vals = report.importance[order][::-1]
    ax.barh(np.arange(len(order)), vals, color="tab:blue")
    ax.set_yticks(np.arange(len(order)))
    ax.set_yticklabels(names, fontsize=7)
    ax.set_xlabel("mean attention weight")
    ax.set_title(f"top {len(order)} features")
    _finish(fig, path)


def save_ablation_plot(curve, path) -> None:
    fig, ax = plt.subplots(figsize=FIGSIZE)
    steps = np.asarray(curve.steps_evaluated)
    mean = np.asarray(curve.metric_mean)
    sd = np.asarray(curve.metric_sd)
    ax.plot(steps, mean, "-o", color="tab:blue")
    ax.fill_between(steps, mean - sd, mean + sd, alpha=0.25,
                    color="tab:blue")
    ax.set_xlabel("features removed")
    ax.set_ylabel(curve.metric_name)
    ax.set_title(f"{curve.mode} ablation")
    _finish(fig, path)


def save_selection_plot(rows, path) -> None:
    lams = [r["lambda"] for r in rows]
    counts = [r["selected_mean"] for r in rows]
    accs = [r["downstream_mean"] for r in rows]
    base = rows[0]["baseline_mean"] if rows else None
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(lams, counts, "-o", color="tab:blue", label="selected features")
    ax.set_xscale("log")
    ax.set_xlabel("L1 strength")
    ax.set_ylabel("selected features", color="tab:blue")
    ax2 = ax.twinx()
    xs = [l for l, a in zip(lams, accs) if a is not None]
    ys = [a for a in accs if a is not None]
    ax2.plot(xs, ys, "-s", color="tab:orange", label="downstream accuracy")
    if base is not None:
        ax2.axhline(base, color="tab:red", linestyle="--",
                    label="full-feature baseline")
    ax2.set_ylabel("downstream accuracy", color="tab:orange")
    ax.set_title("attention L1 feature selection")
    _finish(fig, path)


def save_comparison_plot(groups: dict, metric_name, path) -> None:
    """Bar chart of named metric means, e.g. targeted vs random ablation."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    names = list(groups)
    means = [groups[n][0] for n in names]
    sds = [groups[n][1] for n in names]
    ax.bar(np.arange(len(names)), means, yerr=sds, capsize=4,
           color=["tab:blue", "tab:orange"][: len(names)])
    ax.set_xticks(np.arange(len(names)))
    ax.set_xticklabels(names)
    ax.set_ylabel(metric_name)
    _finish(fig, path)
