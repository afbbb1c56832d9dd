"""Matplotlib renders for the report paths (loss curves, per-image score
distributions, heatmap overlays). All figures go straight to files."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_curve(steps, out_path):
    """Per-step loss components from a run log (list of dicts) to a PNG."""
    if not steps:
        return
    keys = [k for k in ("total", "bce_body", "bce_edge", "dice_body", "dice_edge", "grad")
            if k in steps[0]]
    xs = [s["step"] for s in steps]
    fig, ax = plt.subplots(figsize=(7, 4))
    for key in keys:
        ax.plot(xs, [s[key] for s in steps], label=key, linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def save_score_histogram(scores, title, out_path, bins=20):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(np.asarray(scores, dtype=np.float64), bins=bins, range=(0.0, 1.0),
            color="#3465a4", edgecolor="white")
    ax.set_xlabel(title)
    ax.set_ylabel("images")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def save_heatmap_overlay(image_chw, heatmap, out_path, alpha=0.5, cmap="jet"):
    """Blend a [H,W] heatmap in [0,1] over a [3,H,W] image and write a PNG."""
    base = np.transpose(np.asarray(image_chw, dtype=np.float64), (1, 2, 0))
    colors = plt.get_cmap(cmap)(np.asarray(heatmap, dtype=np.float64))[..., :3]
    blended = np.clip((1 - alpha) * base + alpha * colors, 0.0, 1.0)
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(blended)
    ax.axis("off")
    fig.tight_layout(pad=0)
    fig.savefig(out_path, dpi=150, bbox_inches="tight", pad_inches=0)
    plt.close(fig)
