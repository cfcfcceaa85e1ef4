"""Figure rendering for the reporting commands.

Figures are rasterized with the Agg backend and written atomically next to
the delimited outputs; PNG metadata is stripped so reruns are byte-identical.
"""
from __future__ import annotations

from io import BytesIO
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from ._util import atomic_write_bytes
from .planner import DISEASES

_SEVERITY_NAMES = ("good", "mild", "moderate", "severe")


def _save(fig, path: str | Path) -> None:
    buf = BytesIO()
    fig.savefig(buf, format="png", dpi=110, metadata={"Software": None})
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def save_metrics_figure(rows: list[dict], path: str | Path) -> None:
    """Histogram of the per-image evaluation metrics."""
    fig, axes = plt.subplots(1, 3, figsize=(9.6, 3.2), sharey=True)
    bins = np.linspace(0.0, 1.0, 21)
    for ax, name in zip(axes, ("pixel_f1", "jaccard", "dice")):
        values = [row[name] for row in rows]
        ax.hist(values, bins=bins, color="#4878cf", edgecolor="white")
        ax.set_xlabel(name)
        ax.set_xlim(0, 1)
    axes[0].set_ylabel("images")
    fig.suptitle(f"mask metrics over {len(rows)} images")
    fig.tight_layout()
    _save(fig, path)


def save_distribution_figure(
    pre: dict[str, np.ndarray],
    post: dict[str, np.ndarray],
    path: str | Path,
) -> None:
    """Severity distribution per condition, before vs after the planned jobs."""
    fig, axes = plt.subplots(1, len(DISEASES), figsize=(3.4 * len(DISEASES), 3.2))
    x = np.arange(len(_SEVERITY_NAMES))
    for ax, disease in zip(np.atleast_1d(axes), DISEASES):
        ax.bar(x - 0.2, pre[disease], width=0.4, label="before", color="#b0b0b0")
        ax.bar(x + 0.2, post[disease], width=0.4, label="after", color="#d1615d")
        ax.set_xticks(x, _SEVERITY_NAMES, fontsize=8)
        ax.set_title(disease)
    np.atleast_1d(axes)[0].set_ylabel("images")
    np.atleast_1d(axes)[0].legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
