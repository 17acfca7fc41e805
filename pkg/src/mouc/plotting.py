"""Static figure rendering for reports (matplotlib, imported lazily)."""

from __future__ import annotations

import io
from typing import Mapping, Optional, Sequence

import numpy as np


def front_scatter_png(groups: Mapping[str, np.ndarray], ref: Optional[Sequence[float]] = None,
                      title: str = "Pareto points by method") -> bytes:
    """Scatter of (f1, f2) per method label; returns PNG bytes."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed metadata keeps the bytes stable across reruns
    fig, ax = plt.subplots(figsize=(6.4, 4.8), dpi=100)
    markers = "osD^v<>p*h"
    for k, (label, pts) in enumerate(sorted(groups.items())):
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        order = np.argsort(pts[:, 0], kind="stable")
        ax.plot(pts[order, 0], pts[order, 1], linestyle="-", linewidth=0.8,
                marker=markers[k % len(markers)], markersize=4, label=label)
    if ref is not None:
        ax.plot([ref[0]], [ref[1]], marker="x", color="k", linestyle="none",
                label="reference")
    ax.set_xlabel("generation cost f1 ($)")
    ax.set_ylabel("CO2 emissions f2 (t)")
    ax.set_title(title)
    ax.grid(True, linewidth=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata={"Software": None})
    plt.close(fig)
    return buf.getvalue()
