"""Figure rendering for the CLI report paths.

Every figure function takes data already computed elsewhere and writes a
PNG next to the corresponding TSV; nothing here feeds back into results.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def save_history_figure(history, path, title="Training history"):
    """Loss curve with the validation metric on a twin axis."""
    epochs = [h[0] for h in history]
    losses = [h[1] for h in history]
    vals = [h[2] for h in history]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, losses, color="tab:blue", lw=1.2, label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss", color="tab:blue")
    ax.tick_params(axis="y", labelcolor="tab:blue")
    ax.grid(alpha=0.3)
    if np.isfinite(vals).any():
        ax2 = ax.twinx()
        ax2.plot(epochs, vals, color="tab:red", lw=1.2, ls="--",
                 label="val metric")
        ax2.set_ylabel("validation metric", color="tab:red")
        ax2.tick_params(axis="y", labelcolor="tab:red")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_link_metrics_figure(result, path, title="Link prediction"):
    """Grouped bars: one group per metric, one bar per edge type plus the
    macro average."""
    names = ["roc_auc", "pr_auc", "f1"]
    groups = sorted(result.per_type) + ["macro"]
    values = {
        g: ([result.per_type[g][n] for n in names] if g != "macro"
            else [result.macro[n] for n in names])
        for g in groups
    }
    x = np.arange(len(names))
    width = 0.8 / len(groups)
    fig, ax = plt.subplots(figsize=(7, 4))
    for i, g in enumerate(groups):
        label = f"edge type {g}" if g != "macro" else "macro"
        ax.bar(x + i * width, values[g], width, label=label)
    ax.set_xticks(x + width * (len(groups) - 1) / 2)
    ax.set_xticklabels(names)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("value")
    ax.set_title(f"{title} ({result.partition})")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_node_metrics_figure(metric_values, path,
                             title="Node classification"):
    """Bars of metric values; error bars when several values per metric."""
    names = sorted(metric_values)
    means = [float(np.mean(metric_values[n])) for n in names]
    stds = [float(np.std(metric_values[n])) for n in names]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(names, means, yerr=stds, capsize=4, color="tab:green",
           alpha=0.8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("value")
    ax.set_title(title)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_deviation_figure(report, path, title="Walk-count check"):
    """Max |power - walk total| per walk length, against the tolerance."""
    lengths = sorted(report.per_length_deviation)
    devs = [max(report.per_length_deviation[l], 1e-18) for l in lengths]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(np.arange(len(lengths)), devs, color="tab:purple", alpha=0.8)
    ax.set_xticks(np.arange(len(lengths)))
    ax.set_xticklabels([str(l) for l in lengths])
    ax.axhline(report.tolerance, color="tab:red", ls="--",
               label=f"tolerance {report.tolerance:g}")
    ax.set_yscale("log")
    ax.set_xlabel("walk length")
    ax.set_ylabel("max absolute deviation")
    ax.set_title(f"{title}: {'pass' if report.passed else 'FAIL'}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
