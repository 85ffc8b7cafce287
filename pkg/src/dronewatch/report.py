"""Figure rendering for the CLI report path (headless matplotlib)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .evaluate import Curve  # noqa: E402

_AXIS_LABELS = {
    "precision_recall": ("recall", "precision"),
    "success_rate": ("IoU threshold", "success rate"),
}


def save_curve_figure(curves: list[tuple[str, Curve]], out_path: str | Path,
                      title: str | None = None) -> Path:
    """Plot one or more curves of the same kind to a PNG next to the CSV."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    kind = curves[0][1].kind if curves else "success_rate"
    for label, curve in curves:
        xs = [p[0] for p in curve.points]
        ys = [p[1] for p in curve.points]
        ax.plot(xs, ys, label=label, linewidth=1.8)
    xlabel, ylabel = _AXIS_LABELS.get(kind, ("x", "value"))
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    if title:
        ax.set_title(title)
    if len(curves) > 1 or (curves and curves[0][0]):
        ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
