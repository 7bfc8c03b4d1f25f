"""Figure rendering for fit and evaluation reports."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, path):
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, dpi=110, metadata={"Software": "handfit"})
    plt.close(fig)


def plot_energy_traces(report, path, max_frames=12):
    """Total-energy convergence per fitted frame, log scale."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    plotted = 0
    for fidx, frame in enumerate(report.frames):
        if frame.failed or not frame.fine_trace:
            continue
        totals = [bd.total for bd in frame.fine_trace]
        ax.semilogy(totals, lw=1.0, alpha=0.8, label=f"frame {fidx}")
        plotted += 1
        if plotted >= max_frames:
            break
    ax.set_xlabel("fine iteration")
    ax.set_ylabel("total energy (mm$^2$)")
    ax.set_title("fine-stage convergence")
    if 0 < plotted <= 8:
        ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_energy_breakdown(report, path):
    """Final energy terms across the sequence."""
    frames = [f for f in report.frames if not f.failed]
    fig, ax = plt.subplots(figsize=(7, 4.0))
    if frames:
        idx = np.arange(len(frames))
        for key, label in (("e_key", "keypoint"), ("e_reg", "regularizer"),
                           ("e_smooth", "smoothness")):
            ax.plot(idx, [getattr(f.breakdown, key) for f in frames],
                    marker="o", ms=3, lw=1.0, label=label)
        ax.set_yscale("log")
        ax.legend(fontsize=8)
    ax.set_xlabel("frame")
    ax.set_ylabel("final energy term (mm$^2$)")
    ax.set_title("per-frame energy breakdown")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_joint_errors(per_frame_errors, path):
    """Mean Euclidean joint error per frame, with the overall mean marked."""
    errors = np.asarray(per_frame_errors, dtype=float)
    fig, ax = plt.subplots(figsize=(7, 4.0))
    if errors.size:
        ax.bar(np.arange(errors.size), errors, color="#4878cf")
        ax.axhline(errors.mean(), color="#d65f5f", lw=1.2,
                   label=f"mean {errors.mean():.4f} mm")
        ax.legend(fontsize=8)
    ax.set_xlabel("frame")
    ax.set_ylabel("mean joint error (mm)")
    ax.set_title("per-frame joint position error")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    _save(fig, path)
