"""Evaluation reports: metrics CSV plus matplotlib figures rendered to files."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .imaging import linear_to_srgb


def _read_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def loss_curve_figure(metrics_csv, out_png) -> None:
    """Training loss components and batch PSNR over iterations."""
    data = _read_csv(metrics_csv)
    if not data:
        return
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    it = data["iteration"]
    for key in ("loss", "l_color", "l_n", "l_s", "l_d", "l_guide"):
        if key in data:
            axes[0].plot(it, data[key], label=key)
    axes[0].set_xlabel("iteration")
    axes[0].set_ylabel("loss")
    axes[0].set_yscale("log")
    axes[0].legend(fontsize=8)
    if "psnr_batch" in data:
        axes[1].plot(it, data["psnr_batch"])
        axes[1].set_xlabel("iteration")
        axes[1].set_ylabel("batch PSNR (dB)")
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)


def comparison_figure(gt: np.ndarray, pred: np.ndarray, out_png,
                      titles=("ground truth", "prediction")) -> None:
    fig, axes = plt.subplots(1, 3, figsize=(12, 4))
    axes[0].imshow(np.clip(gt, 0, 1))
    axes[0].set_title(titles[0])
    axes[1].imshow(np.clip(pred, 0, 1))
    axes[1].set_title(titles[1])
    diff = np.abs(gt.astype(np.float64) - pred).mean(axis=-1)
    im = axes[2].imshow(diff, cmap="magma")
    axes[2].set_title("abs error")
    fig.colorbar(im, ax=axes[2], shrink=0.8)
    for ax in axes:
        ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)


def probe_figure(values: np.ndarray, out_png, title="environment probe") -> None:
    """Tone-mapped lat-long probe image (exposure-normalized)."""
    scale = 1.0 / max(float(np.quantile(values, 0.999)), 1e-6)
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.imshow(linear_to_srgb(np.clip(values * scale, 0, 1)))
    ax.set_title(title)
    ax.set_xlabel("azimuth texel")
    ax.set_ylabel("polar texel")
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)


def write_eval_report(out_dir, rows: list[dict], renders: list[tuple]) -> None:
    """rows -> eval_metrics.csv; (gt, pred) pairs -> comparison PNGs; plus
    any stage metric CSVs found in out_dir -> loss-curve PNGs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if rows:
        keys = list(rows[0])
        with open(out / "eval_metrics.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            writer.writerows(rows)
    for i, (gt, pred) in enumerate(renders):
        comparison_figure(gt, pred, out / f"eval_view_{i:02d}.png")
    for stage in ("stage1", "stage2"):
        src = out / f"{stage}_metrics.csv"
        if src.exists():
            loss_curve_figure(src, out / f"{stage}_losses.png")
