"""Matplotlib figures written next to the CLI's delimited output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..synth.lighting import ILLUMINATION_IDS  # noqa: E402


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_loss_curve(history: list[dict], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    epochs = [h["epoch"] for h in history]
    for key in ("loss", "l1", "si", "grad"):
        if all(key in h for h in history):
            ax.plot(epochs, [h[key] for h in history], marker="o", label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, Path(path))


def plot_depth_comparison(rgb: np.ndarray, gt: np.ndarray, pred: np.ndarray, path: str | Path,
                          max_depth: float = 10.0) -> Path:
    fig, axes = plt.subplots(1, 4, figsize=(13, 2.8))
    err = np.abs(pred - gt) / np.maximum(gt, 1e-3)
    panels = [(rgb, "rgb", None), (gt, "ground truth", "viridis"), (pred, "prediction", "viridis"),
              (err, "abs rel error", "magma")]
    for ax, (img, title, cmap) in zip(axes, panels):
        if cmap is None:
            ax.imshow(img)
        else:
            vmax = max_depth if title != "abs rel error" else max(float(err.max()), 1e-6)
            im = ax.imshow(img, cmap=cmap, vmin=0, vmax=vmax)
            fig.colorbar(im, ax=ax, fraction=0.046)
        ax.set_title(title)
        ax.axis("off")
    return _save(fig, Path(path))


def plot_consistency_matrix(pair_maps: list, path: str | Path) -> Path:
    """Mean relative difference for every illumination pair as an 11 x 11 heat map."""
    n = len(ILLUMINATION_IDS)
    mat = np.zeros((n, n))
    for (i, j), m in pair_maps:
        mat[i, j] = mat[j, i] = float(m.mean())
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    im = ax.imshow(mat, cmap="magma")
    ax.set_xticks(range(n), ILLUMINATION_IDS, rotation=60)
    ax.set_yticks(range(n), ILLUMINATION_IDS)
    fig.colorbar(im, ax=ax)
    ax.set_title("pairwise relative difference")
    return _save(fig, Path(path))


def plot_ablation(rows, path: str | Path) -> Path:
    keys = ("delta1", "delta2", "delta3", "absrel", "rmse")
    fig, ax = plt.subplots(figsize=(6, 3.2))
    width = 0.8 / len(rows)
    x = np.arange(len(keys))
    for k, r in enumerate(rows):
        ax.bar(x + k * width, [getattr(r.metrics, m) for m in keys], width, label=r.arm)
    ax.set_xticks(x + width * (len(rows) - 1) / 2, keys)
    ax.legend()
    ax.set_title("ablation")
    return _save(fig, Path(path))


def colorize_depth(depth: np.ndarray, max_depth: float = 10.0) -> np.ndarray:
    """Depth map to H x W x 3 bytes through the viridis colormap."""
    cmap = matplotlib.colormaps["viridis"]
    rgba = cmap(np.clip(depth / max_depth, 0.0, 1.0))
    return (rgba[..., :3] * 255 + 0.5).astype(np.uint8)
