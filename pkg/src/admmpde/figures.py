"""Figure rendering for run reports and fields.

Uses the non-interactive backend so figures render identically in headless
environments; every function writes a PNG and closes the figure.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def history_figure(report, path):
    """Residual decay and inner iteration counts over the outer loop."""
    hist = report.history
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ks = np.asarray(hist.k)
    ax1.semilogy(ks, np.maximum(hist.pi_s, 1e-300), "o-", ms=3, label="rel. change of z")
    ax1.semilogy(ks, np.maximum(hist.d_s, 1e-300), "s-", ms=3, label="rel. split mismatch")
    ax1.set_xlabel("outer iteration")
    ax1.set_ylabel("stopping quantities")
    ax1.legend()
    ax1.grid(True, which="both", alpha=0.3)
    ax2.bar(ks, hist.inner_iters, width=0.8)
    ax2.set_xlabel("outer iteration")
    ax2.set_ylabel("inner iterations")
    ax2.grid(True, axis="y", alpha=0.3)
    fig.suptitle(f"mesh {report.mesh_i}, {report.algorithm}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def field_figure(grid, nodal, title, path):
    """Render one interior nodal field as an image over the unit square."""
    nodal = np.asarray(nodal, dtype=float)
    if nodal.shape != (grid.n_interior,):
        raise ValueError(f"expected an interior nodal field of length {grid.n_interior}")
    m_side = grid.n_per_side + 2
    full = np.zeros((m_side, m_side))
    full[1:-1, 1:-1] = nodal.reshape(grid.n_per_side, grid.n_per_side)
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(full, origin="lower", extent=[0.0, 1.0, 0.0, 1.0], cmap="viridis")
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def slope_figure(hs, series, path, reference_order=2.0):
    """Log-log error curves against mesh width with a reference slope."""
    hs = np.asarray(hs, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, errs in series.items():
        ax.loglog(hs, errs, "o-", label=label)
    anchor = max(max(e) for e in series.values())
    ref = anchor * (hs / hs[0]) ** reference_order
    ax.loglog(hs, ref, "k--", alpha=0.6, label=f"slope {reference_order:g}")
    ax.set_xlabel("mesh width h")
    ax.set_ylabel("error")
    ax.invert_xaxis()
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def sweep_figure(betas, outer_counts, path):
    """Outer iteration counts across the penalty sweep."""
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(betas, outer_counts, "o-")
    ax.set_xlabel("penalty beta")
    ax.set_ylabel("outer iterations")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def summary_figure(reports, path):
    """Outer iterations per run for a batch of reports, grouped by label."""
    fig, ax = plt.subplots(figsize=(7, 4))
    labels = [f"i={r.mesh_i}\n{r.algorithm}" for r in reports]
    counts = [r.outer_iters for r in reports]
    colors = ["tab:blue" if r.converged else "tab:red" for r in reports]
    ax.bar(range(len(reports)), counts, color=colors)
    ax.set_xticks(range(len(reports)))
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel("outer iterations")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
