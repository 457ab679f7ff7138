"""Figures written next to the text outputs (non-interactive backend)."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_series(path, t, series, title="", ylabel="", logy=False):
    """Line plot of several named series against ``t``; saved as PNG at ``path``."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for name, values in series.items():
        values = np.asarray(values, dtype=float)
        mask = np.isfinite(values)
        ax.plot(np.asarray(t)[mask], np.abs(values[mask]) if logy else values[mask], label=name, lw=1.2)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(series) <= 12:
        ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)
    return Path(path)


def plot_snapshot(path, wig, title=""):
    """Colour map of a Wigner function on its grid; saved as PNG at ``path``."""
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    lim = float(np.max(np.abs(wig.values))) or 1.0
    mesh = ax.pcolormesh(wig.x, wig.p, wig.values.T, cmap="RdBu_r", vmin=-lim, vmax=lim, shading="auto")
    fig.colorbar(mesh, ax=ax, label="W(x, p)")
    ax.set_xlabel("x")
    ax.set_ylabel("p")
    ax.set_title(title or f"t = {wig.time:g}")
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)
    return Path(path)


def plot_errorbars(path, x, estimate, stderr, reference, labels, title=""):
    """Monte Carlo estimates with standard-error bars against reference values."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for i, label in enumerate(labels):
        ax.errorbar(x, estimate[:, i], yerr=3 * stderr[:, i], fmt="o", ms=3, capsize=2, label=f"{label} (MC, 3 s.e.)")
        ax.plot(x, reference[:, i], "k_", ms=12)
    ax.set_xlabel("t")
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)
    return Path(path)
