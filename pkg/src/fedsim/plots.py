"""Figure rendering for metrics files and parameter sweeps."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from fedsim.harness import RoundMetrics


def render_metrics_figures(
    runs: dict[str, list[RoundMetrics]], out_dir: str, prefix: str = "metrics"
) -> list[str]:
    """Render loss / gradient-norm / distance curves for one or more runs.

    ``runs`` maps a legend label to its metrics sequence. Returns the paths of
    the written PNG files.
    """
    os.makedirs(out_dir, exist_ok=True)
    panels = [
        ("global_loss", "Global objective", "log"),
        ("grad_norm_sq", "Squared gradient norm", "log"),
        ("dist_to_opt", "Distance to optimum", "log"),
    ]
    paths = []
    for key, ylabel, yscale in panels:
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        any_positive = False
        for label, metrics in runs.items():
            xs = [m.round for m in metrics]
            ys = [getattr(m, key) for m in metrics]
            ax.plot(xs, ys, label=label, linewidth=1.2)
            any_positive |= any(y > 0 for y in ys)
        ax.set_xlabel("Communication round")
        ax.set_ylabel(ylabel)
        if yscale == "log" and any_positive:
            ax.set_yscale("log")
        if len(runs) > 1:
            ax.legend(fontsize=8)
        fig.tight_layout()
        path = os.path.join(out_dir, f"{prefix}_{key}.png")
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)
    return paths


def render_sweep_figure(
    param_name: str, grid, columns: dict[str, list[float]], out_path: str
) -> str:
    """Render sweep diagnostics (weight bias, slowdown, ...) against a grid."""
    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for label, ys in columns.items():
        ax.plot(grid, ys, label=label, linewidth=1.2)
    ax.set_xlabel(param_name)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
