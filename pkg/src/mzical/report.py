"""Figure rendering for the CLI report paths.

This is the only module that imports matplotlib; the numerical core stays
plot-free. Figures are written next to the delimited outputs they
visualize.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .datagen import Histogram
from .harness import ResultTable

_MODEL_LABELS = {
    "am": "AM (subset)",
    "tl": "TL (subset)",
    "nn-subset": "NN (subset)",
    "nn-full": "NN (pool)",
}


def rmse_box_figure(table: ResultTable, path: str | Path) -> Path:
    """Box plot of per-model test RMSE: box 25th..75th, whiskers 10th..90th."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stats = []
    for model in table.models():
        values = table.test_rmse(model)
        p10, p25, p50, p75, p90 = np.percentile(values, [10, 25, 50, 75, 90])
        stats.append(
            {
                "label": _MODEL_LABELS.get(model, model),
                "med": p50,
                "q1": p25,
                "q3": p75,
                "whislo": p10,
                "whishi": p90,
                "fliers": [],
            }
        )
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bxp(stats, showfliers=False)
    ax.set_ylabel("test RMSE (dB)")
    ax.set_title("Model comparison across seeds")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def histogram_figure(histograms: dict[str, Histogram], path: str | Path) -> Path:
    """Overlaid weight-density histograms (one step curve per dataset)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, hist in histograms.items():
        ax.stairs(hist.density, hist.bin_edges, label=label)
    ax.set_xlabel("matrix weight (dB)")
    ax.set_ylabel("probability density (1/dB)")
    if len(histograms) > 1:
        ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def sweep_figure(validation_rmse: dict[str, dict[int, float]], path: str | Path) -> Path:
    """Validation RMSE versus hidden width, one line per model."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    for model, per_width in sorted(validation_rmse.items()):
        widths = sorted(per_width)
        ax.plot(widths, [per_width[w] for w in widths], marker="o", label=model)
    ax.set_xlabel("hidden width")
    ax.set_ylabel("validation RMSE (dB)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def loss_trace_figure(traces: dict[str, list[float]], path: str | Path) -> Path:
    """Training-loss traces on a log scale, one curve per label."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, trace in traces.items():
        ax.semilogy(trace, label=label)
    ax.set_xlabel("accepted iteration")
    ax.set_ylabel("loss")
    if len(traces) > 1:
        ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
