"""Figures rendered next to the delimited outputs.

Every plot is a view of data that already exists as CSV; figures are
regenerated freely and are not part of the deterministic artifact contract.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .training import MetricsRecord


def render_metrics_figure(records: list[MetricsRecord], path):
    """Two-panel training report: discriminator scores and reconstruction RMS."""
    steps = [r.step for r in records]
    fig, (ax_d, ax_rec) = plt.subplots(2, 1, figsize=(8, 7), sharex=True)

    ax_d.plot(steps, [r.d_score_true for r in records], label="D(true couple)")
    ax_d.plot(steps, [r.d_score_k1 for r in records], label="D(k1 couple)")
    ax_d.axhline(0.5, color="gray", lw=0.8, ls="--")
    ax_d.set_ylabel("mean discriminator score")
    ax_d.set_ylim(-0.05, 1.05)
    ax_d.legend(loc="best", fontsize=8)

    for name in ("prior_latent_rec", "fake_data_rec", "real_latent_rec",
                 "real_data_rec"):
        vals = [getattr(r, name) for r in records]
        ax_rec.plot(steps, vals, label=name)
    ax_rec.set_yscale("log")
    ax_rec.set_xlabel("step")
    ax_rec.set_ylabel("RMS error")
    ax_rec.legend(loc="best", fontsize=8)

    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def render_scatter_figure(groups: list[tuple[np.ndarray, str]], path,
                          title: str = ""):
    """Overlay 2-d point clouds (data vs. samples, translations, latents)."""
    fig, ax = plt.subplots(figsize=(6, 6))
    for points, label in groups:
        pts = np.asarray(points, dtype=np.float64)
        ax.scatter(pts[:, 0], pts[:, 1], s=6, alpha=0.5, label=label)
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    if groups:
        ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
