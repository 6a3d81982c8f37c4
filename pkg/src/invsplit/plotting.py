"""Matplotlib figures written next to the CSV outputs (Agg backend, files only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _save(fig, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_training_trace(trace, path):
    """Losses, PSNR of z and x_hat, and var(x - z) against iteration."""
    it = np.array([r["iter"] for r in trace])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(1, 3, figsize=(11, 3.2))
        for key, label in (("L_D", "L_D"), ("L_G_z", "L_G(z)"), ("L_G_xhat", "L_G(x_hat)")):
            ax[0].plot(it, [r[key] for r in trace], lw=0.8, label=label)
        ax[0].set(xlabel="iteration", ylabel="loss", title="losses")
        ax[0].legend(frameon=False)
        ax[1].plot(it, [r["psnr_z"] for r in trace], lw=0.8, label="z")
        ax[1].plot(it, [r["psnr_xhat"] for r in trace], lw=0.8, label="x_hat")
        ax[1].set(xlabel="iteration", ylabel="PSNR (dB)", title="training-batch PSNR")
        ax[1].legend(frameon=False)
        ax[2].semilogy(it, [max(r["var_x_minus_z"], 1e-300) for r in trace], lw=0.8, color="C3")
        ax[2].set(xlabel="iteration", ylabel="var(x - z)", title="DAE input noise")
        return _save(fig, path)


def plot_residual_histograms(snapshots, path, bins=80):
    """Overlaid histograms of x - z at the snapshot iterations."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for k in sorted(snapshots):
            ax.hist(snapshots[k], bins=bins, density=True, histtype="step", lw=1.0, label=f"iter {k}")
        ax.set(xlabel="x - z", ylabel="density", title="residual distribution")
        if snapshots:
            ax.legend(frameon=False)
        return _save(fig, path)


def plot_admm_trace(traces, path):
    """Primal residual and objective per iteration; ``traces`` maps a label to trace rows."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(1, 2, figsize=(8, 3.2))
        for label, rows in traces.items():
            it = [r["iteration"] for r in rows]
            ax[0].semilogy(it, [max(r["primal_residual"], 1e-300) for r in rows], lw=0.8, label=label)
            ax[1].plot(it, [r["objective"] for r in rows], lw=0.8, label=label)
        ax[0].set(xlabel="iteration", ylabel="||x - z|| / sqrt(n)", title="primal residual")
        ax[1].set(xlabel="iteration", ylabel="objective", title="objective")
        if 0 < len(traces) <= 8:
            ax[1].legend(frameon=False)
        return _save(fig, path)


def plot_metric_bars(rows, path):
    """Per-image PSNR and SSIM from eval rows (dicts with file, psnr, ssim)."""
    names = [r["file"] for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(1, 2, figsize=(max(6, 0.4 * len(names) + 3), 3.2))
        ax[0].bar(range(len(names)), [float(r["psnr"]) for r in rows], color="C0")
        ax[1].bar(range(len(names)), [float(r["ssim"]) for r in rows], color="C1")
        for a, t in zip(ax, ("PSNR (dB)", "SSIM")):
            a.set_xticks(range(len(names)))
            a.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
            a.set_title(t)
        return _save(fig, path)
