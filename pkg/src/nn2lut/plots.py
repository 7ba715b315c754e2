"""Report figures (training curves, per-layer cost breakdown).

Rendered headlessly to files next to the delimited reports.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .netlist import CostReport
from .training import EpochMetrics


def save_training_curves(metrics: list[EpochMetrics], path: str) -> None:
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.5))
    epochs = np.arange(len(metrics))
    ax_loss.plot(epochs, [m.train_loss for m in metrics], color="tab:red")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    ax_loss.grid(True, alpha=0.3)
    ax_acc.plot(epochs, [m.train_acc for m in metrics], label="train", color="tab:blue")
    ax_acc.plot(epochs, [m.valid_acc for m in metrics], label="valid", color="tab:green")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0.0, 1.02)
    ax_acc.legend(loc="lower right")
    ax_acc.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_cost_figure(rep: CostReport, path: str) -> None:
    names = [lc.name for lc in rep.per_layer]
    luts = [lc.luts for lc in rep.per_layer]
    ffs = [lc.ffs for lc in rep.per_layer]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(4.0, 1.4 * len(names) + 2), 3.5))
    width = 0.38
    ax.bar(x - width / 2, luts, width, label="LUTs", color="tab:blue")
    ax.bar(x + width / 2, ffs, width, label="FFs", color="tab:orange")
    ax.set_xticks(x)
    ax.set_xticklabels(names)
    ax.set_ylabel("count")
    ax.set_title(f"pre-synthesis estimates: {rep.lut_count} LUTs, "
                 f"{rep.ff_count} FFs, depth {rep.depth}")
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
