"""Figures written to files next to the numeric outputs (no interactive display)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}  # keep PNG bytes independent of the matplotlib build


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def plot_path(positions: np.ndarray, path: Path, regen_times: np.ndarray | None = None, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(7, 3.5))
    t = np.arange(len(positions))
    ax.plot(t, positions, lw=0.6, color="0.2")
    if regen_times is not None and len(regen_times):
        ax.plot(regen_times, positions[regen_times], "|", color="tab:red", ms=8, label="regeneration")
        ax.legend(loc="upper left", frameon=False)
    ax.set_xlabel("time")
    ax.set_ylabel("position")
    ax.set_title(title)
    return _save(fig, path)


def plot_cascade(levels: np.ndarray, indicator: np.ndarray, nbar: np.ndarray, path: Path) -> Path:
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.5))
    a.vlines(levels[indicator], 0, 1, lw=0.5, color="tab:blue")
    a.set_xlabel("level")
    a.set_yticks([])
    a.set_title(f"coalescences ({indicator.mean():.3f} per level)")
    if len(nbar):
        bins = np.arange(nbar.max() + 2) - 0.5
        b.hist(nbar, bins=bins, color="0.5")
        b.axvline(nbar.mean(), color="tab:red", lw=1, label=f"mean {nbar.mean():.3f}")
        b.legend(frameon=False)
    b.set_xlabel("bi-infinite visits to 0")
    b.set_ylabel("samples")
    return _save(fig, path)


def plot_doubling(estimates: dict, path: Path) -> Path:
    """Stage means of the doubling diagnostics and the slope checkpoints."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    ax = axes[0]
    for key, est in estimates.items():
        means = est.diagnostics.get("stage_means")
        if means:
            ax.plot(range(len(means)), means, "o-", label=key)
    ax.set_xlabel("doublings")
    ax.set_ylabel("mean")
    ax.set_yscale("log")
    ax.legend(frameon=False)
    ax = axes[1]
    slope = estimates.get("slope")
    if slope is not None:
        ax.plot(slope.diagnostics["checkpoints"], slope.diagnostics["rate_means"], "o-", color="tab:green")
        ax.set_xscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("mean X_t / t")
    return _save(fig, path)
