"""Static figures for the report path (matplotlib, Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def line_plot(path, curves, xlabel, ylabel, title="", hline=None, logy=False):
    """``curves`` is a list of (x, y, stderr or None, label)."""
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    for x, y, err, label in curves:
        if err is not None:
            ax.errorbar(x, y, yerr=err, marker="o", ms=3, capsize=2, lw=1, label=label)
        else:
            ax.plot(x, y, marker="o", ms=3, lw=1, label=label)
    if hline is not None:
        ax.axhline(hline, color="0.5", ls="--", lw=0.8)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if any(c[3] for c in curves):
        ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def spectrum_plot(path, result, unit):
    x = result.frequencies - result.resonance
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    ax.errorbar(x, result.delta_p, yerr=result.stderr, marker="o", ms=3, capsize=2, lw=1)
    if result.fwhm is not None:
        half = 0.5 * result.depth
        c = result.center - result.resonance
        ax.hlines(half, c - 0.5 * result.fwhm, c + 0.5 * result.fwhm, colors="C3", lw=1.2,
                  label=f"FWHM {result.fwhm:.3g} {unit}")
        ax.legend(frameon=False)
    ax.set_xlabel(f"omega_s - omega_res [{unit}]")
    ax.set_ylabel("delta P")
    ax.set_title(f"depth {result.depth:.3f}")
    ax.set_xlim(np.min(x), np.max(x))
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
