"""Matplotlib figures written next to the CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
    # fixed metadata keeps repeated runs byte-identical
    "svg.hashsalt": "gtsa",
}


def _save(fig, path):
    fig.savefig(path, metadata={"Software": None} if str(path).endswith(".png") else None)
    plt.close(fig)


def plot_metrics(rows, path):
    """Loss terms, momentum and learning rate against step. ``rows`` are dicts or StepMetrics."""
    get = (lambda r, k: float(r[k])) if rows and isinstance(rows[0], dict) else \
        (lambda r, k: float(getattr(r, k)))
    steps = np.array([get(r, "step") for r in rows])
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(10, 2.8))
        for key, label in [("loss_total", "total"), ("loss_overlap", "overlap"),
                           ("loss_pc", "patch corr."), ("loss_rp", "rotation")]:
            axes[0].plot(steps, [get(r, key) for r in rows], lw=1, label=label)
        axes[0].set_xlabel("step")
        axes[0].set_ylabel("loss")
        axes[0].legend(frameon=False)
        axes[1].plot(steps, [get(r, "momentum") for r in rows], lw=1, color="k")
        axes[1].set_xlabel("step")
        axes[1].set_ylabel("teacher momentum")
        axes[2].plot(steps, [get(r, "lr") for r in rows], lw=1, color="k")
        axes[2].set_xlabel("step")
        axes[2].set_ylabel("learning rate")
        fig.tight_layout()
        _save(fig, path)


def plot_sensitivity(entries, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3))
        names = [e.family.replace("_", " ") for e in entries]
        ax.bar(names, [e.mean_variance for e in entries], color="0.35", width=0.6)
        ax.set_ylabel("mean output variance")
        _save(fig, path)


def plot_matches(export, path):
    """Source image shown twice; lines join each student patch centre to its teacher match."""
    img = export.source
    H, W = img.shape[:2]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(8, 4))
        ax.imshow(np.concatenate([img, img], axis=1), extent=(0, 2 * W, H, 0))
        for crop, off, color in [(export.student_view.crop, 0, "tab:blue"),
                                 (export.teacher_view.crop, W, "tab:orange")]:
            ax.add_patch(plt.Rectangle((crop.x0 + off, crop.y0), crop.width, crop.height,
                                       fill=False, ec=color, lw=1))
        sims = np.array([r[4] for r in export.records]) if export.records else np.zeros(0)
        cmap = plt.get_cmap("viridis")
        for (sx, sy, tx, ty, sim) in export.records:
            ax.plot([sx, tx + W], [sy, ty], "-", lw=0.8, color=cmap((sim + 1) / 2))
            ax.plot([sx], [sy], "o", ms=2.5, color="tab:blue")
            ax.plot([tx + W], [ty], "o", ms=2.5, color="tab:orange")
        ax.set_xlim(0, 2 * W)
        ax.set_ylim(H, 0)
        ax.set_axis_off()
        if len(sims):
            ax.set_title(f"{len(sims)} matched pairs, similarity {sims.min():.2f}-{sims.max():.2f}")
        _save(fig, path)
